use std::collections::BTreeMap;
use std::sync::Arc;

use minimon_core::{validate_name, MetricPoint, Timestamp};
use minimon_tsdb::Tsdb;
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::exposition::ExpositionError;
use crate::scrape::{to_points, write_points};

#[derive(Debug, Error)]
pub enum PushError {
    #[error("invalid job name {0:?}")]
    InvalidJob(String),
    #[error(transparent)]
    Parse(#[from] ExpositionError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushedGroup {
    pub job: String,
    pub pushed_at: Timestamp,
    pub points: Vec<MetricPoint>,
}

/// Ingestion point for short-lived jobs. Each push replaces the job's
/// previous group; every point carries `job=<job>`.
pub struct PushGateway {
    tsdb: Arc<Tsdb>,
    groups: Mutex<BTreeMap<String, PushedGroup>>,
}

impl PushGateway {
    pub fn new(tsdb: Arc<Tsdb>) -> Self {
        PushGateway { tsdb, groups: Mutex::new(BTreeMap::new()) }
    }

    /// Returns the number of points written.
    pub fn push(&self, job: &str, body: &str, now: Timestamp) -> Result<usize, PushError> {
        if !validate_name(job) {
            return Err(PushError::InvalidJob(job.to_string()));
        }
        let mut points = to_points(body, &Default::default(), now)?;
        for p in &mut points {
            p.key.tags.insert("job", job).expect("job is a valid tag name");
        }
        let mut groups = self.groups.lock();
        let (written, err) = write_points(&self.tsdb, points.clone());
        if let Some(e) = err {
            tracing::warn!(job, error = %e, "push gateway points rejected by the store");
        }
        groups.insert(job.to_string(), PushedGroup { job: job.to_string(), pushed_at: now, points });
        Ok(written)
    }

    pub fn group(&self, job: &str) -> Option<PushedGroup> {
        self.groups.lock().get(job).cloned()
    }

    pub fn groups(&self) -> Vec<PushedGroup> {
        self.groups.lock().values().cloned().collect()
    }
}
