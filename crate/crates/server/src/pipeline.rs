//! Bus consumers feeding the three sinks. Each sink is its own consumer
//! group on every `docs.<type>` topic, so a slow or failing sink never
//! holds back the others.
//!
//! Offsets are committed only once the sink has made the batch durable.
//! The document store and archive sync per batch. The time-series store
//! is durable only at checkpoints, so its group advances a private cursor
//! and commits at [`Pipeline::checkpoint`]. Redelivery after a crash is
//! harmless: the document store deduplicates by content hash, raw samples
//! are keyed by timestamp, and archive duplicates are removed by
//! compaction.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use minimon_archive::Archive;
use minimon_bus::{Bus, TopicRecord};
use minimon_core::Document;
use minimon_docstore::DocStore;
use minimon_ingest::Registry;
use minimon_tsdb::Tsdb;
use parking_lot::Mutex;
use serde::Serialize;

pub const TOPIC_PREFIX: &str = "docs.";
pub const BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sink {
    Docstore,
    Tsdb,
    Archive,
}

impl Sink {
    pub const ALL: [Sink; 3] = [Sink::Docstore, Sink::Tsdb, Sink::Archive];

    pub fn group(self) -> &'static str {
        match self {
            Sink::Docstore => "docstore",
            Sink::Tsdb => "tsdb",
            Sink::Archive => "archive",
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    consumed: AtomicU64,
    stored: AtomicU64,
    skipped: AtomicU64,
    decode_errors: AtomicU64,
    rejected_points: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SinkStats {
    /// Records taken off the bus.
    pub consumed: u64,
    /// Documents (or points, for the time-series sink) written.
    pub stored: u64,
    /// Records whose route excludes this sink.
    pub skipped: u64,
    pub decode_errors: u64,
    /// Points the time-series store refused, such as late samples.
    pub rejected_points: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bus(#[from] minimon_bus::BusError),
    #[error(transparent)]
    Docstore(#[from] minimon_docstore::DocStoreError),
    #[error(transparent)]
    Archive(#[from] minimon_archive::ArchiveError),
    #[error(transparent)]
    Tsdb(#[from] minimon_tsdb::PersistError),
}

pub struct Pipeline {
    pub bus: Arc<Bus>,
    pub registry: Arc<Registry>,
    pub docstore: Arc<DocStore>,
    pub tsdb: Arc<Tsdb>,
    pub archive: Arc<Archive>,
    tsdb_dir: Option<PathBuf>,
    counters: [Counters; 3],
    /// Time-series sink progress per topic, committed at checkpoints.
    tsdb_cursor: Mutex<BTreeMap<String, i64>>,
    /// Serializes each sink's consumption.
    sink_locks: [Mutex<()>; 3],
}

fn index(sink: Sink) -> usize {
    sink as usize
}

impl Pipeline {
    pub fn new(bus: Arc<Bus>, registry: Arc<Registry>, docstore: Arc<DocStore>, tsdb: Arc<Tsdb>, archive: Arc<Archive>, tsdb_dir: Option<PathBuf>) -> Self {
        Pipeline {
            bus,
            registry,
            docstore,
            tsdb,
            archive,
            tsdb_dir,
            counters: Default::default(),
            tsdb_cursor: Mutex::new(BTreeMap::new()),
            sink_locks: Default::default(),
        }
    }

    pub fn stats(&self, sink: Sink) -> SinkStats {
        let c = &self.counters[index(sink)];
        SinkStats {
            consumed: c.consumed.load(Ordering::Relaxed),
            stored: c.stored.load(Ordering::Relaxed),
            skipped: c.skipped.load(Ordering::Relaxed),
            decode_errors: c.decode_errors.load(Ordering::Relaxed),
            rejected_points: c.rejected_points.load(Ordering::Relaxed),
        }
    }

    pub fn doc_topics(&self) -> Vec<String> {
        self.bus.topics().into_iter().filter(|t| t.starts_with(TOPIC_PREFIX)).collect()
    }

    /// Records on `topic` this sink has yet to consume.
    pub fn backlog(&self, sink: Sink, topic: &str) -> u64 {
        let next = self.bus.next_offset(topic) as i64;
        let mut done = self.bus.committed(sink.group(), topic);
        if sink == Sink::Tsdb && self.tsdb_dir.is_some() {
            done = done.max(self.tsdb_cursor.lock().get(topic).copied().unwrap_or(-1));
        }
        (next - 1 - done).max(0) as u64
    }

    /// Consumes at most one batch per topic for `sink`. Returns the number
    /// of records taken.
    pub fn pump(&self, sink: Sink) -> Result<usize, PipelineError> {
        let _serial = self.sink_locks[index(sink)].lock();
        let mut taken = 0;
        for topic in self.doc_topics() {
            let deferred = sink == Sink::Tsdb && self.tsdb_dir.is_some();
            let after = if deferred { self.tsdb_cursor.lock().get(&topic).copied().unwrap_or(-1) } else { -1 };
            let records = self.bus.poll_after(sink.group(), &topic, after, BATCH)?;
            let Some(last) = records.last().map(|r| r.offset as i64) else { continue };
            self.apply(sink, &records)?;
            taken += records.len();
            if deferred {
                self.tsdb_cursor.lock().insert(topic, last);
            } else {
                self.bus.commit(sink.group(), &topic, last)?;
            }
        }
        Ok(taken)
    }

    fn apply(&self, sink: Sink, records: &[TopicRecord]) -> Result<(), PipelineError> {
        let c = &self.counters[index(sink)];
        c.consumed.fetch_add(records.len() as u64, Ordering::Relaxed);
        let mut docs = Vec::with_capacity(records.len());
        for r in records {
            match Document::from_canonical(&r.payload) {
                Ok(d) => docs.push(d),
                Err(e) => {
                    tracing::warn!(topic = %r.topic, offset = r.offset, error = %e, "undecodable bus record");
                    c.decode_errors.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        // documents of producers registered without this sink are skipped
        let total = docs.len();
        docs.retain(|d| {
            self.registry.get(&d.producer, &d.doc_type).is_none_or(|reg| match sink {
                Sink::Docstore => reg.route.to_docstore,
                Sink::Tsdb => reg.route.to_tsdb,
                Sink::Archive => reg.route.to_archive,
            })
        });
        c.skipped.fetch_add((total - docs.len()) as u64, Ordering::Relaxed);
        match sink {
            Sink::Docstore => {
                let n = docs.len() as u64;
                self.docstore.index_batch(docs)?;
                self.docstore.sync()?;
                c.stored.fetch_add(n, Ordering::Relaxed);
            }
            Sink::Archive => {
                let mut by_type: BTreeMap<String, Vec<Document>> = BTreeMap::new();
                for d in docs {
                    by_type.entry(d.doc_type.clone()).or_default().push(d);
                }
                for (doc_type, batch) in by_type {
                    self.archive.append(&doc_type, &batch)?;
                    c.stored.fetch_add(batch.len() as u64, Ordering::Relaxed);
                }
                self.archive.sync()?;
            }
            Sink::Tsdb => {
                for d in &docs {
                    let Some(reg) = self.registry.get(&d.producer, &d.doc_type) else { continue };
                    for p in reg.route.tsdb.points(d) {
                        match self.tsdb.write(p) {
                            Ok(()) => c.stored.fetch_add(1, Ordering::Relaxed),
                            Err(e) => {
                                tracing::debug!(error = %e, "time-series sink refused a point");
                                c.rejected_points.fetch_add(1, Ordering::Relaxed)
                            }
                        };
                    }
                }
            }
        }
        Ok(())
    }

    /// Pumps every sink until none has anything left. Returns the number of
    /// records consumed across sinks.
    pub fn pump_until_idle(&self) -> Result<usize, PipelineError> {
        let mut total = 0;
        loop {
            let mut round = 0;
            for sink in Sink::ALL {
                round += self.pump(sink)?;
            }
            if round == 0 {
                return Ok(total);
            }
            total += round;
        }
    }

    /// Makes the time-series store durable and commits its progress.
    pub fn checkpoint(&self) -> Result<(), PipelineError> {
        let Some(dir) = &self.tsdb_dir else { return Ok(()) };
        let _serial = self.sink_locks[index(Sink::Tsdb)].lock();
        let cursor = self.tsdb_cursor.lock().clone();
        self.tsdb.checkpoint(dir)?;
        for (topic, offset) in cursor {
            if offset > self.bus.committed(Sink::Tsdb.group(), &topic) {
                self.bus.commit(Sink::Tsdb.group(), &topic, offset)?;
            }
        }
        Ok(())
    }
}
