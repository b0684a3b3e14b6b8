use std::collections::{BTreeMap, BTreeSet};

use minimon_core::{LabelMatcher, TagSet, Timestamp};
use serde::{Deserialize, Serialize};

use crate::config::{InhibitRule, SilenceSpec};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SuppressionKind {
    Silence,
    Inhibition,
    Outage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suppression {
    pub kind: SuppressionKind,
    /// Silence id, source instance fingerprint, or outage ticket id.
    pub reference: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Silence {
    pub id: String,
    #[serde(flatten)]
    pub spec: SilenceSpec,
    /// Loaded from the configuration file rather than created at runtime.
    pub from_config: bool,
}

impl Silence {
    pub fn active(&self, now: Timestamp) -> bool {
        self.spec.starts_at <= now && now < self.spec.ends_at
    }

    pub fn matches(&self, labels: &TagSet) -> bool {
        all_match(&self.spec.matchers, labels)
    }
}

pub fn all_match(matchers: &[LabelMatcher], labels: &TagSet) -> bool {
    matchers.iter().all(|m| m.matches(labels))
}

/// An externally reported outage. Active on `[starts_at, ends_at)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageWindow {
    pub source: String,
    #[serde(with = "text::matchers")]
    pub matchers: Vec<LabelMatcher>,
    #[serde(with = "text::timestamp")]
    pub starts_at: Timestamp,
    #[serde(with = "text::timestamp")]
    pub ends_at: Timestamp,
    pub ticket_id: String,
}

impl OutageWindow {
    pub fn active(&self, now: Timestamp) -> bool {
        self.starts_at <= now && now < self.ends_at
    }

    pub fn matches(&self, labels: &TagSet) -> bool {
        all_match(&self.matchers, labels)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeedParse {
    pub loaded: usize,
    pub skipped: usize,
}

/// Parses a JSON array of outage windows. Entries that do not decode, have
/// no matchers, or end before they start are skipped and counted. Fails
/// only when the document is not a JSON array.
pub fn parse_outage_feed(body: &str) -> Result<(Vec<OutageWindow>, FeedParse), String> {
    let entries: Vec<serde_json::Value> = serde_json::from_str(body).map_err(|e| format!("outage feed is not a JSON array: {e}"))?;
    let mut windows = Vec::with_capacity(entries.len());
    let mut stats = FeedParse::default();
    for entry in entries {
        match serde_json::from_value::<OutageWindow>(entry) {
            Ok(w) if !w.matchers.is_empty() && w.starts_at < w.ends_at && !w.ticket_id.is_empty() => {
                windows.push(w);
                stats.loaded += 1;
            }
            _ => stats.skipped += 1,
        }
    }
    Ok((windows, stats))
}

/// True when `source` may inhibit `target` under `rule`. A tag missing on
/// both sides counts as agreeing.
pub fn inhibits(rule: &InhibitRule, source: &TagSet, target: &TagSet) -> bool {
    all_match(&rule.source_matchers, source)
        && all_match(&rule.target_matchers, target)
        && rule.equal_labels.iter().all(|l| source.get(l).unwrap_or("") == target.get(l).unwrap_or(""))
}

/// Resolves inhibition among `candidates`, the firing instances not
/// suppressed by anything else, keyed by fingerprint.
///
/// An instance is inhibited iff some candidate that is itself not
/// inhibited inhibits it, so suppression never passes through a suppressed
/// source. Roots are settled first; instances left undecided sit on
/// inhibition cycles with no unsuppressed root and stay unsuppressed.
/// Returns target fingerprint to source fingerprint.
pub fn resolve_inhibition(rules: &[InhibitRule], candidates: &BTreeMap<String, TagSet>) -> BTreeMap<String, String> {
    let mut inhibitors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (t, t_labels) in candidates {
        let sources: Vec<&str> = candidates
            .iter()
            .filter(|(s, s_labels)| s != &t && rules.iter().any(|r| inhibits(r, s_labels, t_labels)))
            .map(|(s, _)| s.as_str())
            .collect();
        inhibitors.insert(t, sources);
    }
    let mut free: BTreeSet<&str> = BTreeSet::new();
    let mut inhibited: BTreeMap<String, String> = BTreeMap::new();
    loop {
        let mut changed = false;
        for (t, sources) in &inhibitors {
            if free.contains(t) || inhibited.contains_key(*t) {
                continue;
            }
            if let Some(s) = sources.iter().find(|s| free.contains(**s)) {
                inhibited.insert(t.to_string(), s.to_string());
                changed = true;
            } else if sources.iter().all(|s| inhibited.contains_key(*s)) {
                free.insert(t);
                changed = true;
            }
        }
        if !changed {
            return inhibited;
        }
    }
}
