//! Runtime wiring: a scheduler loop that evaluates rules, refreshes the
//! outage feed and routes, plus a dispatch loop that delivers.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use minimon_core::{SharedClock, Timestamp};
use minimon_tsdb::Tsdb;
use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::config::{AlertConfig, ConfigError, SilenceSpec};
use crate::engine::{AlertEngine, AlertInstance, EngineStats, SilenceError};
use crate::notify::{DispatchStats, Dispatcher};
use crate::suppress::Silence;

const SCHEDULER_TICK: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Serialize)]
pub struct AlertingStatus {
    pub engine: EngineStats,
    pub dispatch: DispatchStats,
    pub instances: usize,
    pub silences: usize,
    pub outages: usize,
}

struct Schedule {
    next_eval: Timestamp,
    next_outage_pull: Timestamp,
}

pub struct AlertService {
    engine: Mutex<AlertEngine>,
    dispatcher: Dispatcher,
    clock: SharedClock,
    config_path: Option<PathBuf>,
    schedule: Mutex<Schedule>,
    http: reqwest::Client,
}

impl AlertService {
    pub fn new(config: AlertConfig, config_path: Option<PathBuf>, tsdb: Arc<Tsdb>, clock: SharedClock) -> Result<Self, ConfigError> {
        let dispatcher = Dispatcher::new(&config.receivers);
        let engine = AlertEngine::new(config, tsdb)?;
        let now = clock.now();
        Ok(AlertService {
            engine: Mutex::new(engine),
            dispatcher,
            clock,
            config_path,
            schedule: Mutex::new(Schedule { next_eval: now, next_outage_pull: now }),
            http: reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("client builds"),
        })
    }

    pub fn load(path: PathBuf, tsdb: Arc<Tsdb>, clock: SharedClock) -> Result<Self, ConfigError> {
        let config = AlertConfig::load(&path)?;
        AlertService::new(config, Some(path), tsdb, clock)
    }

    /// Re-reads the configuration file. A file that fails to parse or
    /// validate leaves the running configuration untouched.
    pub fn reload(&self) -> Result<(), ConfigError> {
        let Some(path) = &self.config_path else {
            return Err(ConfigError::Invalid("no configuration file to reload".into()));
        };
        let config = AlertConfig::load(path)?;
        let receivers = config.receivers.clone();
        self.engine.lock().reload(config)?;
        self.dispatcher.set_receivers(&receivers);
        let now = self.clock.now();
        let mut s = self.schedule.lock();
        s.next_eval = now;
        s.next_outage_pull = now;
        Ok(())
    }

    pub fn add_silence(&self, spec: SilenceSpec) -> Result<String, SilenceError> {
        self.engine.lock().add_silence(spec)
    }

    pub fn delete_silence(&self, id: &str) -> bool {
        self.engine.lock().delete_silence(id)
    }

    pub fn silences(&self) -> Vec<Silence> {
        self.engine.lock().silences().cloned().collect()
    }

    pub fn instances(&self) -> Vec<AlertInstance> {
        self.engine.lock().instances().cloned().collect()
    }

    pub fn status(&self) -> AlertingStatus {
        let e = self.engine.lock();
        AlertingStatus {
            engine: e.stats(),
            dispatch: self.dispatcher.stats(),
            instances: e.instances().count(),
            silences: e.silences().count(),
            outages: e.outages().len(),
        }
    }

    pub fn with_engine<R>(&self, f: impl FnOnce(&mut AlertEngine) -> R) -> R {
        f(&mut self.engine.lock())
    }

    async fn pull_outages(&self, source: &str) -> Result<String, String> {
        if source.starts_with("http://") || source.starts_with("https://") {
            let resp = self.http.get(source).send().await.map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("outage feed answered {}", resp.status()));
            }
            resp.text().await.map_err(|e| e.to_string())
        } else {
            tokio::fs::read_to_string(source).await.map_err(|e| e.to_string())
        }
    }

    /// One scheduler step: pull outages and evaluate rules when due, then
    /// route and queue whatever is ready.
    pub async fn step(&self) {
        let now = self.clock.now();
        let (feed, interval) = {
            let e = self.engine.lock();
            (e.config().outages.clone(), e.config().evaluation_interval)
        };
        if let Some(feed) = feed {
            let due = {
                let mut s = self.schedule.lock();
                let due = now >= s.next_outage_pull;
                if due {
                    s.next_outage_pull = now.saturating_add(feed.interval);
                }
                due
            };
            if due {
                match self.pull_outages(&feed.source).await {
                    Ok(body) => {
                        if let Err(e) = self.engine.lock().load_outage_feed(&body) {
                            tracing::warn!(error = %e, "outage feed rejected");
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, source = %feed.source, "outage feed unavailable"),
                }
            }
        }
        let evaluate = {
            let mut s = self.schedule.lock();
            let due = now >= s.next_eval;
            if due {
                s.next_eval = now.saturating_add(interval);
            }
            due
        };
        let sent = {
            let mut e = self.engine.lock();
            if evaluate {
                e.tick(now).1
            } else {
                e.flush(now)
            }
        };
        for record in sent {
            self.dispatcher.enqueue(record);
        }
    }

    pub async fn dispatch_due(&self) {
        self.dispatcher.dispatch_due(self.clock.now()).await;
    }

    /// Runs the scheduler and dispatch loops until `shutdown` turns true.
    pub fn spawn(self: Arc<Self>, shutdown: watch::Receiver<bool>) -> (JoinHandle<()>, JoinHandle<()>) {
        let me = self.clone();
        let mut stop = shutdown.clone();
        let scheduler = tokio::spawn(async move {
            let mut tick = tokio::time::interval(SCHEDULER_TICK);
            loop {
                tokio::select! {
                    _ = tick.tick() => me.step().await,
                    _ = stop.changed() => return,
                }
            }
        });
        let mut stop = shutdown;
        let dispatch = tokio::spawn(async move {
            let mut tick = tokio::time::interval(SCHEDULER_TICK);
            loop {
                tokio::select! {
                    _ = tick.tick() => self.dispatch_due().await,
                    _ = stop.changed() => return,
                }
            }
        });
        (scheduler, dispatch)
    }
}
