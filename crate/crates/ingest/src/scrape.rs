use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use minimon_core::{parse_duration, MetricPoint, SharedClock, TagSet, Timestamp};
use minimon_tsdb::Tsdb;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScrapeStatus {
    Never,
    Ok,
    Fail,
}

/// Scrape target configuration file:
///
/// ```toml
/// [[targets]]
/// url = "http://127.0.0.1:9100/metrics"
/// interval = "15s"
/// tags = { site = "T2_CH_CERN" }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub url: String,
    pub interval: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid targets file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("target {url}: {reason}")]
    Target { url: String, reason: String },
}

impl TargetsFile {
    pub fn parse(text: &str) -> Result<Vec<ScrapeTarget>, ConfigError> {
        let file: TargetsFile = toml::from_str(text)?;
        file.targets
            .into_iter()
            .map(|t| {
                let bad = |reason: String| ConfigError::Target { url: t.url.clone(), reason };
                let interval = parse_duration(&t.interval).map_err(|e| bad(e.to_string()))?;
                let tags = TagSet::try_from(t.tags.clone()).map_err(|e| bad(e.to_string()))?;
                ScrapeTarget::new(t.url.clone(), interval, tags).map_err(bad)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScrapeTarget {
    pub url: String,
    #[serde(serialize_with = "ser_duration")]
    pub interval: Duration,
    pub static_tags: TagSet,
    pub last_status: ScrapeStatus,
    pub last_error: Option<String>,
    pub last_scrape: Option<Timestamp>,
    pub last_samples: usize,
}

fn ser_duration<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&minimon_core::format_duration(*d))
}

impl ScrapeTarget {
    pub fn new(url: impl Into<String>, interval: Duration, static_tags: TagSet) -> Result<Self, String> {
        if interval < Duration::from_secs(1) {
            return Err("interval must be at least 1s".into());
        }
        Ok(ScrapeTarget { url: url.into(), interval, static_tags, last_status: ScrapeStatus::Never, last_error: None, last_scrape: None, last_samples: 0 })
    }
}

/// Turns an exposition body into points: missing timestamps become `now`
/// and target tags override same-named sample tags.
pub fn to_points(body: &str, static_tags: &TagSet, now: Timestamp) -> Result<Vec<MetricPoint>, exposition::ExpositionError> {
    Ok(exposition::parse(body)?
        .into_iter()
        .map(|s| {
            let mut key = s.key;
            key.tags.merge_from(static_tags);
            MetricPoint::new(key, s.value, s.ts.unwrap_or(now))
        })
        .collect())
}

/// Writes points, returning how many the store accepted.
pub(crate) fn write_points(tsdb: &Tsdb, points: Vec<MetricPoint>) -> (usize, Option<String>) {
    let mut written = 0;
    let mut first_error = None;
    for p in points {
        match tsdb.write(p) {
            Ok(()) => written += 1,
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    (written, first_error)
}

struct TargetSlot {
    state: Mutex<ScrapeTarget>,
    /// Held for the duration of a fetch so one target never has two in flight.
    in_flight: tokio::sync::Mutex<()>,
}

/// Pull-mode collector polling every configured target on its interval.
pub struct Scraper {
    targets: Vec<Arc<TargetSlot>>,
    tsdb: Arc<Tsdb>,
    clock: SharedClock,
    client: reqwest::Client,
}

impl Scraper {
    pub fn new(targets: Vec<ScrapeTarget>, tsdb: Arc<Tsdb>, clock: SharedClock) -> Self {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("http client");
        let targets = targets.into_iter().map(|t| Arc::new(TargetSlot { state: Mutex::new(t), in_flight: tokio::sync::Mutex::new(()) })).collect();
        Scraper { targets, tsdb, clock, client }
    }

    pub fn targets(&self) -> Vec<ScrapeTarget> {
        self.targets.iter().map(|t| t.state.lock().clone()).collect()
    }

    /// Scrapes target `index` once and returns the number of points written.
    /// Returns `None` if a scrape of that target is already running.
    pub async fn scrape(&self, index: usize) -> Option<usize> {
        let slot = self.targets.get(index)?;
        let _guard = slot.in_flight.try_lock().ok()?;
        let (url, tags) = {
            let t = slot.state.lock();
            (t.url.clone(), t.static_tags.clone())
        };
        let body = self.fetch(&url).await;
        let now = self.clock.now();
        let outcome = body.and_then(|b| to_points(&b, &tags, now).map_err(|e| format!("parse error: {e}")));
        let mut t = slot.state.lock();
        t.last_scrape = Some(now);
        match outcome {
            Ok(points) => {
                t.last_samples = points.len();
                let (written, err) = write_points(&self.tsdb, points);
                t.last_status = ScrapeStatus::Ok;
                t.last_error = err.map(|e| format!("{} samples rejected, first: {e}", t.last_samples - written));
                Some(written)
            }
            Err(e) => {
                tracing::warn!(%url, error = %e, "scrape failed");
                t.last_status = ScrapeStatus::Fail;
                t.last_error = Some(e);
                t.last_samples = 0;
                Some(0)
            }
        }
    }

    async fn fetch(&self, url: &str) -> Result<String, String> {
        let resp = self.client.get(url).send().await.map_err(|e| format!("fetch failed: {e}"))?;
        if !resp.status().is_success() {
            return Err(format!("fetch failed: HTTP {}", resp.status()));
        }
        resp.text().await.map_err(|e| format!("fetch failed: {e}"))
    }

    /// Polls every target on its own interval until `shutdown` fires.
    pub async fn run(self: Arc<Self>, mut shutdown: tokio::sync::watch::Receiver<bool>) {
        let mut tasks = tokio::task::JoinSet::new();
        for i in 0..self.targets.len() {
            let me = self.clone();
            let interval = self.targets[i].state.lock().interval;
            let mut stop = shutdown.clone();
            tasks.spawn(async move {
                let mut tick = tokio::time::interval(interval);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                loop {
                    tokio::select! {
                        _ = tick.tick() => { me.scrape(i).await; }
                        _ = stop.changed() => break,
                    }
                }
            });
        }
        let _ = shutdown.changed().await;
        tasks.shutdown().await;
    }
}
