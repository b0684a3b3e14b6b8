//! The minimon service: storage sinks fed from the bus, the HTTP API, the
//! pub/sub proxy with its metrics bridge, scraping and alerting, each run
//! by its own background loop.

mod http;
mod pipeline;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle as ThreadHandle;
use std::time::Duration;

use minimon_alerting::AlertService;
use minimon_archive::{Archive, CompactionReport};
use minimon_bus::{Bus, BusConfig};
use minimon_core::{SharedClock, Timestamp};
use minimon_docstore::{DocStore, DocStoreConfig};
use minimon_ingest::{Injector, PushGateway, Registry, Scraper, TargetsFile};
use minimon_pubsub::{Bridge, Broker, Pattern, ProxyConfig, ProxyHandle, TokenTable};
use minimon_tsdb::{RetentionReport, Tsdb, TsdbConfig};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use http::router;
pub use pipeline::{Pipeline, PipelineError, Sink, SinkStats, BATCH, TOPIC_PREFIX};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bus: {0}")]
    Bus(#[from] minimon_bus::BusError),
    #[error("docstore: {0}")]
    Docstore(#[from] minimon_docstore::DocStoreError),
    #[error("archive: {0}")]
    Archive(#[from] minimon_archive::ArchiveError),
    #[error("tsdb: {0}")]
    Tsdb(#[from] minimon_tsdb::PersistError),
    #[error("producer registry: {0}")]
    Registry(#[from] minimon_ingest::RegistryError),
    #[error("alerting: {0}")]
    Alerting(#[from] minimon_alerting::ConfigError),
    #[error("{0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub http_addr: SocketAddr,
    /// Pub/sub proxy listen address; the proxy is off when unset.
    pub pubsub_addr: Option<SocketAddr>,
    /// Token table file for the proxy.
    pub pubsub_tokens: Option<PathBuf>,
    /// Token granting full access when no token table is given.
    pub pubsub_token: String,
    /// Subjects whose metric messages the bridge writes to the tsdb.
    pub bridge_subjects: Vec<String>,
    pub alerting_config: Option<PathBuf>,
    pub scrape_targets: Option<PathBuf>,
    pub docstore: DocStoreConfig,
    pub tsdb: TsdbConfig,
    pub maintenance_interval: Duration,
    pub checkpoint_interval: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            http_addr: "127.0.0.1:9400".parse().expect("valid address"),
            pubsub_addr: None,
            pubsub_tokens: None,
            pubsub_token: "minimon".into(),
            bridge_subjects: vec!["metrics.>".into()],
            alerting_config: None,
            scrape_targets: None,
            docstore: DocStoreConfig::default(),
            tsdb: TsdbConfig::default(),
            maintenance_interval: Duration::from_secs(60),
            checkpoint_interval: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MaintenanceReport {
    pub bins_finalized: usize,
    pub tsdb_retention: RetentionReport,
    pub indexes_dropped: Vec<String>,
    pub bus_records_truncated: u64,
    pub compactions: Vec<CompactionReport>,
}

/// Every component of a running service, without any task attached.
pub struct Service {
    pub pipeline: Arc<Pipeline>,
    pub injector: Arc<Injector>,
    pub push: Arc<PushGateway>,
    pub scraper: Option<Arc<Scraper>>,
    pub alerting: Option<Arc<AlertService>>,
    pub broker: Option<Arc<Broker>>,
    pub bridge: Arc<Bridge>,
    pub clock: SharedClock,
    pub started_at: Timestamp,
}

impl Service {
    /// Opens (or creates) all stores under `config.data_dir`.
    pub fn open(config: &ServiceConfig, clock: SharedClock) -> Result<Service, ServiceError> {
        let dir = &config.data_dir;
        std::fs::create_dir_all(dir)?;
        let bus = Arc::new(Bus::open(dir.join("bus"), BusConfig::default(), clock.clone())?);
        let registry = Arc::new(Registry::open(dir.join("producers.json"))?);
        let docstore = Arc::new(DocStore::open(dir.join("docstore"), config.docstore.clone())?);
        let tsdb_dir = dir.join("tsdb");
        let tsdb = Arc::new(Tsdb::open(&tsdb_dir, config.tsdb.clone(), clock.clone())?);
        let archive = Arc::new(Archive::open(dir.join("archive"))?);
        let pipeline = Arc::new(Pipeline::new(bus.clone(), registry.clone(), docstore, tsdb.clone(), archive, Some(tsdb_dir)));
        let injector = Arc::new(Injector::new(registry, bus));
        let push = Arc::new(PushGateway::new(tsdb.clone()));
        let scraper = match &config.scrape_targets {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let targets = TargetsFile::parse(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
                Some(Arc::new(Scraper::new(targets, tsdb.clone(), clock.clone())))
            }
            None => None,
        };
        let alerting = match &config.alerting_config {
            Some(path) => Some(Arc::new(AlertService::load(path.clone(), tsdb.clone(), clock.clone())?)),
            None => None,
        };
        let bridge = Arc::new(Bridge::new(tsdb, clock.clone()));
        let started_at = clock.now();
        Ok(Service { pipeline, injector, push, scraper, alerting, broker: None, bridge, clock, started_at })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Finalizes bins, applies every retention policy and compacts
    /// eligible archive partitions.
    pub fn maintain(&self, now: Timestamp) -> MaintenanceReport {
        let p = &self.pipeline;
        let mut report = MaintenanceReport {
            bins_finalized: p.tsdb.downsample_tick(now),
            tsdb_retention: p.tsdb.apply_ts_retention(now),
            ..Default::default()
        };
        match p.docstore.apply_doc_retention(now) {
            Ok(dropped) => report.indexes_dropped = dropped,
            Err(e) => tracing::warn!(error = %e, "docstore retention failed"),
        }
        match p.bus.apply_retention(now) {
            Ok(n) => report.bus_records_truncated = n,
            Err(e) => tracing::warn!(error = %e, "bus retention failed"),
        }
        for r in p.archive.compact_eligible(now) {
            match r {
                Ok(c) => report.compactions.push(c),
                Err(e) => tracing::warn!(error = %e, "archive compaction failed"),
            }
        }
        report
    }
}

/// A service with its listeners and loops running.
pub struct RunningService {
    pub service: Arc<Service>,
    pub http_addr: SocketAddr,
    pub pubsub_addr: Option<SocketAddr>,
    proxy: Option<ProxyHandle>,
    shutdown: watch::Sender<bool>,
    stop_sinks: Arc<AtomicBool>,
    sink_threads: Vec<ThreadHandle<()>>,
    tasks: Vec<JoinHandle<()>>,
}

fn spawn_sink(pipeline: Arc<Pipeline>, sink: Sink, stop: Arc<AtomicBool>) -> ThreadHandle<()> {
    std::thread::Builder::new()
        .name(format!("sink-{}", sink.group()))
        .spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match pipeline.pump(sink) {
                    Ok(0) => std::thread::sleep(Duration::from_millis(20)),
                    Ok(_) => {}
                    Err(e) => {
                        tracing::error!(sink = sink.group(), error = %e, "sink failed; retrying");
                        std::thread::sleep(Duration::from_secs(1));
                    }
                }
            }
        })
        .expect("spawn sink thread")
}

/// Opens the stores, binds the listeners and starts every loop.
pub async fn start(config: ServiceConfig, clock: SharedClock) -> Result<RunningService, ServiceError> {
    let mut service = Service::open(&config, clock)?;
    let (shutdown, stop_rx) = watch::channel(false);
    let mut tasks = Vec::new();

    let proxy = match config.pubsub_addr {
        Some(addr) => {
            let tokens = match &config.pubsub_tokens {
                Some(path) => TokenTable::parse(&std::fs::read_to_string(path)?).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?,
                None => TokenTable::open_access(&config.pubsub_token),
            };
            let handle = minimon_pubsub::serve(addr, tokens, ProxyConfig::default()).await?;
            let patterns = config
                .bridge_subjects
                .iter()
                .map(|s| Pattern::parse(s).map_err(|e| ServiceError::Config(format!("bridge subject {s}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            tasks.push(service.bridge.attach(&handle.broker, &patterns));
            service.broker = Some(handle.broker.clone());
            Some(handle)
        }
        None => None,
    };
    let service = Arc::new(service);

    let listener = tokio::net::TcpListener::bind(config.http_addr).await?;
    let http_addr = listener.local_addr()?;
    let app = router(service.clone());
    let mut stop = stop_rx.clone();
    tasks.push(tokio::spawn(async move {
        let served = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = stop.changed().await;
        });
        if let Err(e) = served.await {
            tracing::error!(error = %e, "http server failed");
        }
    }));

    let stop_sinks = Arc::new(AtomicBool::new(false));
    let sink_threads = Sink::ALL.iter().map(|s| spawn_sink(service.pipeline.clone(), *s, stop_sinks.clone())).collect();

    let svc = service.clone();
    let mut stop = stop_rx.clone();
    let (maintenance, checkpoint) = (config.maintenance_interval, config.checkpoint_interval);
    tasks.push(tokio::spawn(async move {
        let mut maintain = tokio::time::interval(maintenance);
        let mut ckpt = tokio::time::interval(checkpoint);
        ckpt.tick().await;
        loop {
            tokio::select! {
                _ = maintain.tick() => {
                    let s = svc.clone();
                    let _ = tokio::task::spawn_blocking(move || s.maintain(s.now())).await;
                }
                _ = ckpt.tick() => {
                    let p = svc.pipeline.clone();
                    if let Ok(Err(e)) = tokio::task::spawn_blocking(move || p.checkpoint()).await {
                        tracing::error!(error = %e, "checkpoint failed");
                    }
                }
                _ = stop.changed() => return,
            }
        }
    }));

    if let Some(scraper) = &service.scraper {
        tasks.push(tokio::spawn(scraper.clone().run(stop_rx.clone())));
    }
    if let Some(alerting) = &service.alerting {
        let (a, b) = alerting.clone().spawn(stop_rx.clone());
        tasks.push(a);
        tasks.push(b);
    }
    let pubsub_addr = proxy.as_ref().map(|p| p.local_addr);
    tracing::info!(%http_addr, ?pubsub_addr, "minimon service started");
    Ok(RunningService { service, http_addr, pubsub_addr, proxy, shutdown, stop_sinks, sink_threads, tasks })
}

impl RunningService {
    /// Stops every loop, drains the bus into the sinks and checkpoints.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.shutdown.send(true);
        self.stop_sinks.store(true, Ordering::Relaxed);
        if let Some(p) = self.proxy {
            p.shutdown().await;
        }
        for t in self.tasks {
            t.abort();
            let _ = t.await;
        }
        let service = self.service;
        let threads = self.sink_threads;
        tokio::task::spawn_blocking(move || {
            for t in threads {
                let _ = t.join();
            }
            let p = &service.pipeline;
            p.pump_until_idle().map_err(|e| ServiceError::Config(e.to_string()))?;
            p.checkpoint().map_err(|e| ServiceError::Config(e.to_string()))?;
            p.bus.sync()?;
            Ok(())
        })
        .await
        .map_err(|e| ServiceError::Config(e.to_string()))?
    }
}
