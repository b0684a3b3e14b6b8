//! Rule evaluation, suppression and grouping. The engine is a plain state
//! machine driven by explicit timestamps, so a fixed sequence of inputs
//! always yields the same notification log.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use minimon_core::{TagSet, Timestamp};
use minimon_tsdb::Tsdb;
use serde::{Deserialize, Serialize};

use crate::config::{AlertConfig, CompiledRule, ConfigError, SilenceSpec};
use crate::notify::{GroupStatus, Notification, NotificationRecord, NotifiedAlert};
use crate::suppress::{resolve_inhibition, FeedParse, OutageWindow, Silence, Suppression, SuppressionKind};
use crate::text::render_template;

pub const ALERTNAME: &str = "alertname";
pub const KNOWN_OUTAGE: &str = "known_outage";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AlertState {
    Pending,
    Firing,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertInstance {
    pub rule: String,
    pub fingerprint: String,
    pub labels: TagSet,
    pub annotations: BTreeMap<String, String>,
    pub state: AlertState,
    pub started_at: Timestamp,
    pub fired_at: Option<Timestamp>,
    pub resolved_at: Option<Timestamp>,
    pub value: f64,
    pub suppressed_by: Option<Suppression>,
    /// Included in a sent notification while firing.
    pub notified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateChange {
    pub fingerprint: String,
    pub from: Option<AlertState>,
    pub to: AlertState,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    pub evaluations: u64,
    pub eval_errors: u64,
    pub outage_feed_skipped: u64,
    pub notifications: u64,
}

#[derive(Debug, Clone)]
struct Group {
    labels: TagSet,
    created_at: Timestamp,
    last_sent: Option<Timestamp>,
    last_digest: Vec<(String, AlertState)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SilenceError(pub String);

impl std::fmt::Display for SilenceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SilenceError {}

pub struct AlertEngine {
    config: AlertConfig,
    rules: Vec<CompiledRule>,
    tsdb: Arc<Tsdb>,
    instances: BTreeMap<String, AlertInstance>,
    silences: BTreeMap<String, Silence>,
    next_silence: u64,
    outages: Vec<OutageWindow>,
    groups: BTreeMap<String, Group>,
    log: Vec<NotificationRecord>,
    stats: EngineStats,
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

impl AlertEngine {
    pub fn new(config: AlertConfig, tsdb: Arc<Tsdb>) -> Result<Self, ConfigError> {
        let rules = config.compile()?;
        let mut engine = AlertEngine {
            config: config.clone(),
            rules,
            tsdb,
            instances: BTreeMap::new(),
            silences: BTreeMap::new(),
            next_silence: 0,
            outages: Vec::new(),
            groups: BTreeMap::new(),
            log: Vec::new(),
            stats: EngineStats::default(),
        };
        engine.load_config_silences();
        Ok(engine)
    }

    fn load_config_silences(&mut self) {
        self.silences.retain(|_, s| !s.from_config);
        for (i, spec) in self.config.silences.iter().enumerate() {
            let id = spec.id.clone().unwrap_or_else(|| format!("config-{}", i + 1));
            self.silences.insert(id.clone(), Silence { id, spec: spec.clone(), from_config: true });
        }
    }

    /// Swaps in a new configuration. Instances of rules that still exist
    /// keep their lifecycle; runtime silences survive.
    pub fn reload(&mut self, config: AlertConfig) -> Result<(), ConfigError> {
        let rules = config.compile()?;
        self.instances.retain(|_, i| rules.iter().any(|r| r.rule.name == i.rule));
        self.rules = rules;
        self.config = config;
        self.load_config_silences();
        Ok(())
    }

    pub fn config(&self) -> &AlertConfig {
        &self.config
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn instances(&self) -> impl Iterator<Item = &AlertInstance> {
        self.instances.values()
    }

    pub fn instance(&self, fingerprint: &str) -> Option<&AlertInstance> {
        self.instances.get(fingerprint)
    }

    pub fn log(&self) -> &[NotificationRecord] {
        &self.log
    }

    /// The notification log as JSON lines.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.to_line() + "\n").collect()
    }

    pub fn silences(&self) -> impl Iterator<Item = &Silence> {
        self.silences.values()
    }

    pub fn add_silence(&mut self, spec: SilenceSpec) -> Result<String, SilenceError> {
        spec.validate().map_err(SilenceError)?;
        let id = match &spec.id {
            Some(id) if self.silences.contains_key(id) => return Err(SilenceError(format!("silence {id} already exists"))),
            Some(id) => id.clone(),
            None => loop {
                self.next_silence += 1;
                let id = format!("silence-{}", self.next_silence);
                if !self.silences.contains_key(&id) {
                    break id;
                }
            },
        };
        self.silences.insert(id.clone(), Silence { id: id.clone(), spec: SilenceSpec { id: Some(id.clone()), ..spec }, from_config: false });
        Ok(id)
    }

    pub fn delete_silence(&mut self, id: &str) -> bool {
        self.silences.remove(id).is_some()
    }

    pub fn set_outages(&mut self, outages: Vec<OutageWindow>) {
        self.outages = outages;
    }

    pub fn outages(&self) -> &[OutageWindow] {
        &self.outages
    }

    /// Replaces the outage windows from a feed body. A body that is not a
    /// JSON array leaves the current windows in place.
    pub fn load_outage_feed(&mut self, body: &str) -> Result<FeedParse, String> {
        let (windows, stats) = crate::suppress::parse_outage_feed(body)?;
        self.stats.outage_feed_skipped += stats.skipped as u64;
        self.outages = windows;
        Ok(stats)
    }

    /// Evaluates every rule at instant `now` and advances lifecycles.
    pub fn evaluate(&mut self, now: Timestamp) -> Vec<StateChange> {
        self.stats.evaluations += 1;
        let mut changes = Vec::new();
        for compiled in &self.rules {
            let rule = &compiled.rule;
            let matrix = match self.tsdb.eval(&compiled.ast, now, now, Duration::from_millis(1)) {
                Ok(m) => m,
                Err(e) => {
                    self.stats.eval_errors += 1;
                    tracing::warn!(rule = %rule.name, error = %e, "rule evaluation failed");
                    continue;
                }
            };
            let mut breaching = BTreeMap::new();
            for series in matrix {
                let Some(&(_, value)) = series.samples.iter().find(|(t, _)| *t == now) else { continue };
                if !rule.comparator.breaches(value, rule.threshold) {
                    continue;
                }
                let mut labels = series.tags;
                labels.merge_from(&compiled.labels);
                labels.insert(ALERTNAME, rule.name.clone()).expect("alertname is a valid tag");
                breaching.insert(labels.render(), (labels, value));
            }
            for (fp, (labels, value)) in breaching.iter() {
                let annotations = rule.annotations.iter().map(|(k, t)| (k.clone(), render_template(t, *value, labels))).collect();
                let active = self.instances.get(fp).filter(|i| i.state != AlertState::Resolved);
                match active {
                    None => {
                        let firing = rule.for_duration.is_zero();
                        let state = if firing { AlertState::Firing } else { AlertState::Pending };
                        self.instances.insert(
                            fp.clone(),
                            AlertInstance {
                                rule: rule.name.clone(),
                                fingerprint: fp.clone(),
                                labels: labels.clone(),
                                annotations,
                                state,
                                started_at: now,
                                fired_at: firing.then_some(now),
                                resolved_at: None,
                                value: *value,
                                suppressed_by: None,
                                notified: false,
                            },
                        );
                        changes.push(StateChange { fingerprint: fp.clone(), from: None, to: AlertState::Pending, at: now });
                        if firing {
                            changes.push(StateChange { fingerprint: fp.clone(), from: Some(AlertState::Pending), to: AlertState::Firing, at: now });
                        }
                    }
                    Some(_) => {
                        let inst = self.instances.get_mut(fp).expect("present");
                        inst.value = *value;
                        inst.annotations = annotations;
                        if inst.state == AlertState::Pending && now.as_millis() - inst.started_at.as_millis() >= ms(rule.for_duration) {
                            inst.state = AlertState::Firing;
                            inst.fired_at = Some(now);
                            changes.push(StateChange { fingerprint: fp.clone(), from: Some(AlertState::Pending), to: AlertState::Firing, at: now });
                        }
                    }
                }
            }
            let recovered: Vec<String> = self
                .instances
                .values()
                .filter(|i| i.rule == rule.name && i.state != AlertState::Resolved && !breaching.contains_key(&i.fingerprint))
                .map(|i| i.fingerprint.clone())
                .collect();
            for fp in recovered {
                let inst = self.instances.get_mut(&fp).expect("present");
                changes.push(StateChange { fingerprint: fp.clone(), from: Some(inst.state), to: AlertState::Resolved, at: now });
                inst.state = AlertState::Resolved;
                inst.resolved_at = Some(now);
                inst.suppressed_by = None;
                if !inst.notified {
                    // nobody was told it fired, so nobody needs to hear it stopped
                    self.instances.remove(&fp);
                }
            }
        }
        changes
    }

    /// Recomputes suppression of every firing instance at `now`. Silences
    /// take precedence over outages, and both over inhibition, which only
    /// considers instances no silence or outage already mutes.
    pub fn annotate(&mut self, now: Timestamp) {
        let annotate_only = self.config.route.annotate_only;
        for inst in self.instances.values_mut() {
            inst.annotations.remove(KNOWN_OUTAGE);
            inst.suppressed_by = None;
            if inst.state != AlertState::Firing {
                continue;
            }
            let outage = self.outages.iter().find(|o| o.active(now) && o.matches(&inst.labels));
            if let Some(o) = outage {
                inst.annotations.insert(KNOWN_OUTAGE.into(), o.ticket_id.clone());
            }
            if let Some(s) = self.silences.values().find(|s| s.active(now) && s.matches(&inst.labels)) {
                inst.suppressed_by = Some(Suppression { kind: SuppressionKind::Silence, reference: s.id.clone() });
            } else if let Some(o) = outage.filter(|_| !annotate_only) {
                inst.suppressed_by = Some(Suppression { kind: SuppressionKind::Outage, reference: o.ticket_id.clone() });
            }
        }
        if self.config.inhibit_rules.is_empty() {
            return;
        }
        let candidates: BTreeMap<String, TagSet> = self
            .instances
            .values()
            .filter(|i| i.state == AlertState::Firing && i.suppressed_by.is_none())
            .map(|i| (i.fingerprint.clone(), i.labels.clone()))
            .collect();
        for (target, source) in resolve_inhibition(&self.config.inhibit_rules, &candidates) {
            if let Some(inst) = self.instances.get_mut(&target) {
                inst.suppressed_by = Some(Suppression { kind: SuppressionKind::Inhibition, reference: source });
            }
        }
    }

    /// Emits the notifications due at `now` and appends them to the log.
    pub fn route(&mut self, now: Timestamp) -> Vec<NotificationRecord> {
        let route = self.config.route.clone();
        let mut members: BTreeMap<String, (TagSet, Vec<String>)> = BTreeMap::new();
        for inst in self.instances.values() {
            let include = match inst.state {
                AlertState::Firing => inst.suppressed_by.is_none(),
                AlertState::Resolved => inst.notified,
                AlertState::Pending => false,
            };
            if include {
                let group_labels = inst.labels.project(&route.group_by);
                members.entry(group_labels.render()).or_insert_with(|| (group_labels, Vec::new())).1.push(inst.fingerprint.clone());
            }
        }
        self.groups.retain(|k, _| members.contains_key(k));
        let mut out = Vec::new();
        for (key, (labels, fps)) in members {
            let group = self.groups.entry(key.clone()).or_insert_with(|| Group { labels, created_at: now, last_sent: None, last_digest: Vec::new() });
            let digest: Vec<(String, AlertState)> = fps.iter().map(|fp| (fp.clone(), self.instances[fp].state)).collect();
            let any_firing = digest.iter().any(|(_, s)| *s == AlertState::Firing);
            let due = match group.last_sent {
                None => now.as_millis() >= group.created_at.as_millis() + ms(route.group_wait),
                Some(last) if digest != group.last_digest => now.as_millis() >= last.as_millis() + ms(route.group_interval),
                Some(last) => any_firing && now.as_millis() >= last.as_millis() + ms(route.repeat_interval),
            };
            if !due {
                continue;
            }
            let alerts = fps
                .iter()
                .map(|fp| {
                    let i = &self.instances[fp];
                    NotifiedAlert { labels: i.labels.clone(), annotations: i.annotations.clone(), value: i.value, state: i.state, started_at: i.started_at }
                })
                .collect();
            let status = if any_firing { GroupStatus::Firing } else { GroupStatus::Resolved };
            let record = NotificationRecord {
                at: now,
                receiver: route.receiver.clone(),
                group_key: key.clone(),
                notification: Notification { group_labels: group.labels.clone(), status, alerts },
            };
            group.last_sent = Some(now);
            group.last_digest = digest.into_iter().filter(|(_, s)| *s == AlertState::Firing).collect();
            for fp in &fps {
                let inst = self.instances.get_mut(fp).expect("present");
                match inst.state {
                    AlertState::Resolved => {
                        self.instances.remove(fp);
                    }
                    _ => inst.notified = true,
                }
            }
            self.stats.notifications += 1;
            self.log.push(record.clone());
            out.push(record);
        }
        out
    }

    /// One full cycle: evaluate, suppress, route.
    pub fn tick(&mut self, now: Timestamp) -> (Vec<StateChange>, Vec<NotificationRecord>) {
        let changes = self.evaluate(now);
        self.annotate(now);
        let sent = self.route(now);
        (changes, sent)
    }

    /// Suppress and route without evaluating rules, for the scheduler's
    /// sub-interval wakeups.
    pub fn flush(&mut self, now: Timestamp) -> Vec<NotificationRecord> {
        self.annotate(now);
        self.route(now)
    }
}
