//! The alerting configuration file.
//!
//! ```toml
//! evaluation_interval = "60s"
//!
//! [route]
//! group_by = ["site"]
//! group_wait = "30s"
//! group_interval = "5m"
//! repeat_interval = "4h"
//! receiver = "ops"
//! annotate_only = false
//!
//! [[receivers]]
//! name = "ops"
//! kind = "FILE"
//! destination = "/var/lib/minimon/notifications.jsonl"
//!
//! [[rules]]
//! name = "JobFailureRate"
//! query = 'avg by (site) (avg_over_time(exitCode[1h]))'
//! comparator = ">"
//! threshold = 0.9
//! for = "5m"
//! labels = { severity = "page" }
//! annotations = { summary = "$labels.site failing at $value" }
//!
//! [[inhibit_rules]]
//! source_matchers = ['alertname="NodeDown"']
//! target_matchers = ['alertname="ServiceSlow"']
//! equal_labels = ["host"]
//!
//! [[silences]]
//! matchers = ['site="T2_XX"']
//! starts_at = "2026-01-01T00:00:00Z"
//! ends_at = "2026-01-02T00:00:00Z"
//! creator = "ops"
//! comment = "site downtime"
//!
//! [outages]
//! source = "/var/lib/minimon/outages.json"
//! interval = "5m"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use minimon_core::{LabelMatcher, LabelOp, TagSet, Timestamp};
use minimon_tsdb::{parse_query, QueryAst};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn breaches(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Lt => value < threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRule {
    pub name: String,
    pub query: String,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(rename = "for", with = "text::duration", default)]
    pub for_duration: Duration,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub annotations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    #[serde(default)]
    pub group_by: Vec<String>,
    #[serde(with = "text::duration", default = "default_group_wait")]
    pub group_wait: Duration,
    #[serde(with = "text::duration", default = "default_group_interval")]
    pub group_interval: Duration,
    #[serde(with = "text::duration", default = "default_repeat_interval")]
    pub repeat_interval: Duration,
    pub receiver: String,
    /// Outage matches only annotate instead of suppressing.
    #[serde(default)]
    pub annotate_only: bool,
}

fn default_group_wait() -> Duration {
    Duration::from_secs(30)
}

fn default_group_interval() -> Duration {
    Duration::from_secs(5 * 60)
}

fn default_repeat_interval() -> Duration {
    Duration::from_secs(4 * 3600)
}

fn default_evaluation_interval() -> Duration {
    Duration::from_secs(60)
}

fn default_outage_interval() -> Duration {
    Duration::from_secs(5 * 60)
}

impl RouteConfig {
    pub fn new(receiver: impl Into<String>, group_by: &[&str]) -> Self {
        RouteConfig {
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            group_wait: default_group_wait(),
            group_interval: default_group_interval(),
            repeat_interval: default_repeat_interval(),
            receiver: receiver.into(),
            annotate_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiverKind {
    #[serde(rename = "FILE", alias = "file")]
    File,
    #[serde(rename = "WEBHOOK", alias = "webhook")]
    Webhook,
    #[serde(rename = "STDOUT", alias = "stdout")]
    Stdout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub name: String,
    pub kind: ReceiverKind,
    /// File path for FILE, URL for WEBHOOK, unused for STDOUT.
    #[serde(default)]
    pub destination: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InhibitRule {
    #[serde(with = "text::matchers")]
    pub source_matchers: Vec<LabelMatcher>,
    #[serde(with = "text::matchers")]
    pub target_matchers: Vec<LabelMatcher>,
    pub equal_labels: Vec<String>,
}

/// A silence as written in the file or posted to the API.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilenceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(with = "text::matchers")]
    pub matchers: Vec<LabelMatcher>,
    #[serde(with = "text::timestamp")]
    pub starts_at: Timestamp,
    #[serde(with = "text::timestamp")]
    pub ends_at: Timestamp,
    #[serde(default)]
    pub creator: String,
    #[serde(default)]
    pub comment: String,
}

impl SilenceSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.matchers.is_empty() {
            return Err("silence needs at least one matcher".into());
        }
        if let Some(m) = self.matchers.iter().find(|m| m.op == LabelOp::Neq) {
            return Err(format!("silence matcher {} must use = or =~", text::render_matcher(m)));
        }
        if self.starts_at >= self.ends_at {
            return Err(format!("silence starts_at {} is not before ends_at {}", self.starts_at, self.ends_at));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageFeedConfig {
    /// File path or http(s) URL serving a JSON array of outage windows.
    pub source: String,
    #[serde(with = "text::duration", default = "default_outage_interval")]
    pub interval: Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertConfig {
    #[serde(with = "text::duration", default = "default_evaluation_interval")]
    pub evaluation_interval: Duration,
    pub route: RouteConfig,
    #[serde(default)]
    pub receivers: Vec<ReceiverConfig>,
    #[serde(default)]
    pub rules: Vec<AlertRule>,
    #[serde(default)]
    pub inhibit_rules: Vec<InhibitRule>,
    #[serde(default)]
    pub silences: Vec<SilenceSpec>,
    #[serde(default)]
    pub outages: Option<OutageFeedConfig>,
}

/// A rule after validation, with its query parsed and labels checked.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: AlertRule,
    pub ast: QueryAst,
    pub labels: TagSet,
}

impl AlertConfig {
    pub fn new(route: RouteConfig, receivers: Vec<ReceiverConfig>) -> Self {
        AlertConfig {
            evaluation_interval: default_evaluation_interval(),
            route,
            receivers,
            rules: Vec::new(),
            inhibit_rules: Vec::new(),
            silences: Vec::new(),
            outages: None,
        }
    }

    pub fn parse(toml_text: &str) -> Result<AlertConfig, ConfigError> {
        let config: AlertConfig = toml::from_str(toml_text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        config.compile()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<AlertConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        AlertConfig::parse(&text)
    }

    /// Validates the whole configuration and parses every rule query.
    pub fn compile(&self) -> Result<Vec<CompiledRule>, ConfigError> {
        if self.evaluation_interval.is_zero() {
            return Err(invalid("evaluation_interval must be positive"));
        }
        let r = &self.route;
        if !(r.group_wait <= r.group_interval && r.group_interval <= r.repeat_interval) {
            return Err(invalid("route needs group_wait <= group_interval <= repeat_interval"));
        }
        if r.group_interval.is_zero() {
            return Err(invalid("route group_interval must be positive"));
        }
        let mut receivers = BTreeSet::new();
        for rc in &self.receivers {
            if !receivers.insert(rc.name.as_str()) {
                return Err(invalid(format!("duplicate receiver {:?}", rc.name)));
            }
            if rc.kind != ReceiverKind::Stdout && rc.destination.is_empty() {
                return Err(invalid(format!("receiver {:?} needs a destination", rc.name)));
            }
            if rc.kind == ReceiverKind::Webhook && !(rc.destination.starts_with("http://") || rc.destination.starts_with("https://")) {
                return Err(invalid(format!("receiver {:?} destination must be an http(s) URL", rc.name)));
            }
        }
        if !receivers.contains(r.receiver.as_str()) {
            return Err(invalid(format!("route receiver {:?} is not defined", r.receiver)));
        }
        for ir in &self.inhibit_rules {
            if ir.equal_labels.is_empty() {
                return Err(invalid("inhibit rule needs at least one equal_labels entry"));
            }
        }
        for s in &self.silences {
            s.validate().map_err(invalid)?;
        }
        let mut names = BTreeSet::new();
        let mut compiled = Vec::with_capacity(self.rules.len());
        for rule in &self.rules {
            if !names.insert(rule.name.as_str()) {
                return Err(invalid(format!("duplicate rule {:?}", rule.name)));
            }
            if rule.name.is_empty() {
                return Err(invalid("rule name must not be empty"));
            }
            if !rule.threshold.is_finite() {
                return Err(invalid(format!("rule {:?} threshold must be finite", rule.name)));
            }
            let ast = parse_query(&rule.query).map_err(|e| invalid(format!("rule {:?}: {e}", rule.name)))?;
            let labels = TagSet::try_from(rule.labels.clone()).map_err(|e| invalid(format!("rule {:?}: {e}", rule.name)))?;
            compiled.push(CompiledRule { rule: rule.clone(), ast, labels });
        }
        Ok(compiled)
    }
}
