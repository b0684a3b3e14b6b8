//! Synthetic batch-job producer. The job schema is invented: it carries
//! enough fields (site, status, retry index, resource use) to exercise
//! every sink and the latest-status-per-job view.
//!
//! Each tick emits exactly `jobs_per_tick` documents. Active jobs advance
//! first in FIFO order; remaining slots start new jobs. Lifecycle:
//! `pending -> running -> completed | failed`, and a failed job with
//! `retry_index < retry_max` returns to `pending` with the index bumped.
//! The emitted sequence depends only on the `JobSimSpec` and the tick count.

use std::collections::VecDeque;
use std::time::Duration;

use minimon_core::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DOC_TYPE: &str = "condor_job";
pub const DEFAULT_PRODUCER: &str = "spider";
pub const DEFAULT_SITES: [&str; 5] = ["T1_US_FNAL", "T2_CH_CERN", "T2_DE_DESY", "T2_IT_Pisa", "T2_US_MIT"];
pub const FAILURE_EXIT_CODES: [i64; 4] = [1, 84, 8001, 50664];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSimSpec {
    pub sites: Vec<String>,
    pub jobs_per_tick: usize,
    pub tick_interval: Duration,
    /// Simulated time per wall-clock time; 720 turns 12 minutes into 1 s.
    pub time_scale: f64,
    pub failure_rate: f64,
    pub retry_max: u32,
    pub seed: u64,
    /// Timestamp of the first tick's documents.
    pub start: Timestamp,
}

impl JobSimSpec {
    pub fn new(seed: u64, start: Timestamp) -> Self {
        JobSimSpec {
            sites: DEFAULT_SITES.iter().map(|s| s.to_string()).collect(),
            jobs_per_tick: 10,
            tick_interval: Duration::from_secs(12 * 60),
            time_scale: 1.0,
            failure_rate: 0.1,
            retry_max: 3,
            seed,
            start,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sites.is_empty() {
            return Err("at least one site is required".into());
        }
        if self.jobs_per_tick == 0 {
            return Err("jobs per tick must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(format!("failure rate {} outside [0, 1]", self.failure_rate));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(format!("time scale {} must be positive", self.time_scale));
        }
        if self.tick_interval.is_zero() {
            return Err("tick interval must be positive".into());
        }
        Ok(())
    }

    /// Wall-clock time between ticks, which is also the simulated
    /// timestamp step so emitted documents track the real clock.
    pub fn wall_interval(&self) -> Duration {
        self.tick_interval.div_f64(self.time_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Completed,
    Failed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Running => "running",
            JobStatus::Completed => "completed",
            JobStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Job {
    id: String,
    site: String,
    status: JobStatus,
    retry_index: u32,
    cpu_hours: f64,
    wallclock_hours: f64,
    memory_mb: i64,
}

/// Exit notification for a job that reached a terminal attempt state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitMessage {
    pub subject: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub index: u64,
    pub timestamp: Timestamp,
    /// Injection-ready documents: `{"timestamp": ms, "payload": {...}}`.
    pub docs: Vec<Value>,
    pub exits: Vec<ExitMessage>,
}

pub struct Simulator {
    spec: JobSimSpec,
    rng: ChaCha8Rng,
    active: VecDeque<Job>,
    next_job: u64,
    tick: u64,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

impl Simulator {
    pub fn new(spec: JobSimSpec) -> Result<Self, String> {
        spec.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(Simulator { spec, rng, active: VecDeque::new(), next_job: 0, tick: 0 })
    }

    pub fn spec(&self) -> &JobSimSpec {
        &self.spec
    }

    fn new_job(&mut self) -> Job {
        let site = self.spec.sites[self.rng.random_range(0..self.spec.sites.len())].clone();
        let memory_mb = self.rng.random_range(1..=16) * 500;
        let id = format!("sim{}-{:06}", self.spec.seed, self.next_job);
        self.next_job += 1;
        Job { id, site, status: JobStatus::Pending, retry_index: 0, cpu_hours: 0.0, wallclock_hours: 0.0, memory_mb }
    }

    fn advance(&mut self, job: &mut Job) {
        match job.status {
            JobStatus::Pending => job.status = JobStatus::Running,
            JobStatus::Running => {
                let failed = self.rng.random::<f64>() < self.spec.failure_rate;
                job.cpu_hours = round3(self.rng.random_range(0.05..12.0));
                job.wallclock_hours = round3(job.cpu_hours * self.rng.random_range(1.0..1.6));
                job.status = if failed { JobStatus::Failed } else { JobStatus::Completed };
            }
            JobStatus::Failed => {
                job.retry_index += 1;
                job.status = JobStatus::Pending;
                job.cpu_hours = 0.0;
                job.wallclock_hours = 0.0;
            }
            JobStatus::Completed => unreachable!("completed jobs leave the active queue"),
        }
    }

    fn is_done(&self, job: &Job) -> bool {
        match job.status {
            JobStatus::Completed => true,
            JobStatus::Failed => job.retry_index >= self.spec.retry_max,
            _ => false,
        }
    }

    fn exit_message(&mut self, job: &Job) -> ExitMessage {
        let exit_code = match job.status {
            JobStatus::Failed => FAILURE_EXIT_CODES[self.rng.random_range(0..FAILURE_EXIT_CODES.len())],
            _ => 0,
        };
        ExitMessage {
            subject: format!("cms.jobs.{}", job.site),
            payload: json!({
                "job_id": job.id,
                "site": job.site,
                "status": job.status.as_str(),
                "retry_index": job.retry_index,
                "exit_code": exit_code,
                "final": self.is_done(job),
            }),
        }
    }

    pub fn next_tick(&mut self) -> Tick {
        let index = self.tick;
        self.tick += 1;
        let step = self.spec.wall_interval().as_millis() as u64;
        let timestamp = self.spec.start.add_millis(index * step);
        let slots = self.spec.jobs_per_tick;
        let advancing = self.active.len().min(slots);
        let mut emitted = Vec::with_capacity(slots);
        let mut exits = Vec::new();
        for _ in 0..advancing {
            let mut job = self.active.pop_front().expect("counted above");
            self.advance(&mut job);
            if matches!(job.status, JobStatus::Completed | JobStatus::Failed) {
                exits.push(self.exit_message(&job));
            }
            if !self.is_done(&job) {
                self.active.push_back(job.clone());
            }
            emitted.push(job);
        }
        for _ in advancing..slots {
            let job = self.new_job();
            self.active.push_back(job.clone());
            emitted.push(job);
        }
        let docs = emitted
            .iter()
            .enumerate()
            .map(|(i, j)| {
                json!({
                    "timestamp": timestamp.as_millis() + i as u64,
                    "payload": {
                        "job_id": j.id,
                        "site": j.site,
                        "status": j.status.as_str(),
                        "retry_index": j.retry_index,
                        "cpu_hours": j.cpu_hours,
                        "wallclock_hours": j.wallclock_hours,
                        "memory_mb": j.memory_mb,
                    }
                })
            })
            .collect();
        Tick { index, timestamp, docs, exits }
    }
}

/// Registration the simulator uses: every field typed, `site` and
/// `status` as series tags and `cpu_hours` as the sampled value.
pub fn registration(producer: &str) -> Value {
    json!({
        "producer": producer,
        "doc_type": DOC_TYPE,
        "schema": {
            "producer": producer,
            "doc_type": DOC_TYPE,
            "fields": [
                {"name": "job_id", "type": "string", "required": true},
                {"name": "site", "type": "string", "required": true},
                {"name": "status", "type": "string", "required": true},
                {"name": "retry_index", "type": "int", "required": true},
                {"name": "cpu_hours", "type": "float"},
                {"name": "wallclock_hours", "type": "float"},
                {"name": "memory_mb", "type": "int"}
            ]
        },
        "daily_quota_bytes": 1_000_000_000u64,
        "route": {
            "to_docstore": true,
            "to_tsdb": true,
            "to_archive": true,
            "tsdb": {"tags": ["site", "status"], "values": ["cpu_hours"]}
        }
    })
}
