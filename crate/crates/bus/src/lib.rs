//! In-process durable stream transport.
//!
//! Topics are single-partition append-only logs with contiguous offsets
//! starting at 0. Consumer groups poll records above their committed offset
//! and commit explicitly, which gives at-least-once delivery: anything not
//! committed is delivered again, including after a restart.
//!
//! Layout under the bus root:
//!
//! ```text
//! topics/<topic>/<base_offset>.log   see `segment` for the frame format
//! topics/<topic>/<base_offset>.tix
//! groups/<group>.cursor              `topic=committed_offset` lines
//! ```

mod cursor;
mod segment;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use minimon_core::{validate_name, validate_topic, SharedClock, Timestamp, DAY_MS};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::segment::Segment;

pub use segment::read_log_file;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("invalid topic name {0:?}")]
    InvalidTopic(String),
    #[error("invalid group name {0:?}")]
    InvalidGroup(String),
    #[error("offset {offset} was never delivered to group {group} on {topic}")]
    Undelivered { group: String, topic: String, offset: i64 },
    #[error("corrupt cursor file for group {group}: {reason}")]
    CorruptCursor { group: String, reason: String },
    #[error("bus storage error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BusError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct BusConfig {
    /// Upper bound on how long an appended record may sit unsynced.
    pub fsync_interval: Duration,
    /// Age past which fully consumed records are truncated.
    pub retention: Duration,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig { fsync_interval: Duration::from_millis(100), retention: Duration::from_millis(7 * DAY_MS) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRecord {
    pub topic: Arc<str>,
    pub offset: u64,
    pub payload: Arc<[u8]>,
    pub enqueued_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCursor {
    pub group: String,
    pub topic: String,
    /// `-1` when nothing has been committed.
    pub committed_offset: i64,
}

struct Topic {
    name: Arc<str>,
    segment: Segment,
}

#[derive(Default)]
struct GroupState {
    committed: BTreeMap<String, i64>,
    /// Highest offset handed out per topic since this process started.
    delivered: HashMap<String, i64>,
}

pub struct Bus {
    root: PathBuf,
    config: BusConfig,
    clock: SharedClock,
    topics: RwLock<HashMap<String, Arc<Mutex<Topic>>>>,
    groups: Mutex<BTreeMap<String, GroupState>>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Bus {
    /// Opens (or creates) a bus rooted at `root`, replaying every topic log
    /// and cursor file found there.
    pub fn open(root: impl AsRef<Path>, config: BusConfig, clock: SharedClock) -> Result<Bus> {
        let root = root.as_ref().to_path_buf();
        let topics_dir = root.join("topics");
        let groups_dir = root.join("groups");
        fs::create_dir_all(&topics_dir)?;
        fs::create_dir_all(&groups_dir)?;
        let now = clock.now();

        let mut topics = HashMap::new();
        for entry in fs::read_dir(&topics_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if validate_topic(&name).is_err() || !entry.file_type()?.is_dir() {
                continue;
            }
            let segment = Segment::open(&entry.path(), now)?;
            topics.insert(name.clone(), Arc::new(Mutex::new(Topic { name: name.into(), segment })));
        }

        let mut groups = BTreeMap::new();
        for entry in fs::read_dir(&groups_dir)? {
            let path = entry?.path();
            let Some(group) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".cursor")) else {
                if path.extension().is_some_and(|e| e == "tmp") {
                    let _ = fs::remove_file(&path);
                }
                continue;
            };
            let group = group.to_string();
            let text = fs::read_to_string(&path)?;
            let committed = cursor::parse(&text).map_err(|reason| BusError::CorruptCursor { group: group.clone(), reason })?;
            groups.insert(group, GroupState { committed, delivered: HashMap::new() });
        }

        Ok(Bus { root, config, clock, topics: RwLock::new(topics), groups: Mutex::new(groups) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn topic(&self, topic: &str) -> Option<Arc<Mutex<Topic>>> {
        self.topics.read().get(topic).cloned()
    }

    fn topic_or_create(&self, topic: &str) -> Result<Arc<Mutex<Topic>>> {
        if let Some(t) = self.topic(topic) {
            return Ok(t);
        }
        let mut topics = self.topics.write();
        if let Some(t) = topics.get(topic) {
            return Ok(t.clone());
        }
        let dir = self.root.join("topics").join(topic);
        let segment = Segment::create(&dir, self.clock.now())?;
        let t = Arc::new(Mutex::new(Topic { name: topic.into(), segment }));
        topics.insert(topic.to_string(), t.clone());
        Ok(t)
    }

    /// Appends `payload` to `topic` and returns its offset.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<u64> {
        validate_topic(topic).map_err(|_| BusError::InvalidTopic(topic.to_string()))?;
        let handle = self.topic_or_create(topic)?;
        let mut t = handle.lock();
        let offset = t.segment.append(payload, self.clock.now())?;
        t.segment.sync_if_due(self.config.fsync_interval)?;
        Ok(offset)
    }

    /// Names of every topic, sorted.
    pub fn topics(&self) -> Vec<String> {
        let mut names: Vec<String> = self.topics.read().keys().cloned().collect();
        names.sort();
        names
    }

    /// Offset the next publish to `topic` will receive.
    pub fn next_offset(&self, topic: &str) -> u64 {
        self.topic(topic).map(|t| t.lock().segment.next_offset()).unwrap_or(0)
    }

    /// Registers `group` as a consumer of `topic` without consuming.
    /// Registered groups hold back truncation of the topic.
    pub fn subscribe(&self, group: &str, topic: &str) -> Result<()> {
        self.check_names(group, topic)?;
        let mut groups = self.groups.lock();
        let state = groups.entry(group.to_string()).or_default();
        if !state.committed.contains_key(topic) {
            state.committed.insert(topic.to_string(), -1);
            self.persist_group(group, state)?;
        }
        Ok(())
    }

    fn check_names(&self, group: &str, topic: &str) -> Result<()> {
        if !validate_name(group) {
            return Err(BusError::InvalidGroup(group.to_string()));
        }
        validate_topic(topic).map_err(|_| BusError::InvalidTopic(topic.to_string()))
    }

    fn persist_group(&self, group: &str, state: &GroupState) -> Result<()> {
        let path = self.root.join("groups").join(format!("{group}.cursor"));
        cursor::write_atomic(&path, &cursor::render(&state.committed))?;
        Ok(())
    }

    /// Up to `max` records above the group's committed offset, in offset
    /// order. Without a commit, the same records come back next time.
    pub fn poll(&self, group: &str, topic: &str, max: usize) -> Result<Vec<TopicRecord>> {
        self.poll_after(group, topic, -1, max)
    }

    /// Like [`Bus::poll`] but starting above `max(after, committed)`, for
    /// consumers that defer commits past several batches.
    pub fn poll_after(&self, group: &str, topic: &str, after: i64, max: usize) -> Result<Vec<TopicRecord>> {
        self.subscribe(group, topic)?;
        let committed = self.committed(group, topic).max(after);
        let Some(handle) = self.topic(topic) else {
            return Ok(Vec::new());
        };
        let records: Vec<TopicRecord> = {
            let t = handle.lock();
            let seg = &t.segment;
            let first = ((committed + 1).max(0) as u64).max(seg.base_offset);
            let start = (first - seg.base_offset) as usize;
            seg.records
                .iter()
                .enumerate()
                .skip(start)
                .take(max.max(1))
                .map(|(i, r)| TopicRecord {
                    topic: t.name.clone(),
                    offset: seg.base_offset + i as u64,
                    payload: r.payload.clone(),
                    enqueued_at: r.enqueued_at,
                })
                .collect()
        };
        if let Some(last) = records.last() {
            let mut groups = self.groups.lock();
            let delivered = groups.entry(group.to_string()).or_default().delivered.entry(topic.to_string()).or_insert(-1);
            *delivered = (*delivered).max(last.offset as i64);
        }
        Ok(records)
    }

    /// Advances the committed offset to `max(current, offset)` and makes it
    /// durable before returning. Offsets never handed to this group are
    /// rejected.
    pub fn commit(&self, group: &str, topic: &str, offset: i64) -> Result<()> {
        self.check_names(group, topic)?;
        let mut groups = self.groups.lock();
        let state = groups.entry(group.to_string()).or_default();
        let current = state.committed.get(topic).copied().unwrap_or(-1);
        let delivered = state.delivered.get(topic).copied().unwrap_or(-1).max(current);
        if offset < 0 || offset > delivered {
            return Err(BusError::Undelivered { group: group.to_string(), topic: topic.to_string(), offset });
        }
        if offset > current {
            state.committed.insert(topic.to_string(), offset);
            self.persist_group(group, state)?;
        }
        Ok(())
    }

    pub fn committed(&self, group: &str, topic: &str) -> i64 {
        self.groups.lock().get(group).and_then(|g| g.committed.get(topic).copied()).unwrap_or(-1)
    }

    pub fn cursors(&self) -> Vec<GroupCursor> {
        let groups = self.groups.lock();
        groups
            .iter()
            .flat_map(|(g, s)| {
                s.committed.iter().map(|(t, c)| GroupCursor { group: g.clone(), topic: t.clone(), committed_offset: *c })
            })
            .collect()
    }

    /// Number of records a group has yet to commit on a topic.
    pub fn lag(&self, group: &str, topic: &str) -> u64 {
        let next = self.next_offset(topic) as i64;
        (next - 1 - self.committed(group, topic)).max(0) as u64
    }

    /// Forces every topic to stable storage.
    pub fn sync(&self) -> Result<()> {
        let handles: Vec<_> = self.topics.read().values().cloned().collect();
        for h in handles {
            h.lock().segment.sync()?;
        }
        Ok(())
    }

    /// Truncates records older than the retention period once every group
    /// registered on the topic has committed past them. Topics nobody has
    /// subscribed to are left alone. Returns the number of records removed.
    pub fn apply_retention(&self, now: Timestamp) -> Result<u64> {
        let cutoff = now.saturating_sub(self.config.retention);
        let floors: HashMap<String, i64> = {
            let groups = self.groups.lock();
            let mut floors: HashMap<String, i64> = HashMap::new();
            for state in groups.values() {
                for (topic, c) in &state.committed {
                    let e = floors.entry(topic.clone()).or_insert(i64::MAX);
                    *e = (*e).min(*c);
                }
            }
            floors
        };
        let mut removed = 0;
        let handles: Vec<_> = self.topics.read().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (name, handle) in handles {
            let Some(floor) = floors.get(&name).copied() else { continue };
            if floor < 0 {
                continue;
            }
            let mut t = handle.lock();
            let seg = &mut t.segment;
            let expired = seg.records.iter().take_while(|r| r.enqueued_at < cutoff).count() as u64;
            let new_base = (seg.base_offset + expired).min(floor as u64 + 1);
            if new_base > seg.base_offset {
                removed += new_base - seg.base_offset;
                seg.truncate_front(new_base)?;
            }
        }
        Ok(removed)
    }

    /// Lowest retained offset of a topic.
    pub fn base_offset(&self, topic: &str) -> u64 {
        self.topic(topic).map(|t| t.lock().segment.base_offset).unwrap_or(0)
    }
}

impl Drop for Bus {
    fn drop(&mut self) {
        if let Err(e) = self.sync() {
            tracing::warn!(error = %e, "bus sync on drop failed");
        }
    }
}
