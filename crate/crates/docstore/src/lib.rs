//! Document sink: daily indexes named `<doc_type>-YYYY.MM.DD`, content-hash
//! deduplication, per-type retention, and derived indexes maintained at
//! store time.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! indexes/<name>/docs.log     one canonical JSON document per line
//! indexes/<name>/fields.idx   field-value postings, rebuilt by re-scan if stale
//! derived/specs.json          registered derived index specs
//! derived/<name>.json         derived state plus per-index applied counts
//! ```

mod daily;
mod derived;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use minimon_core::{FieldMatcher, Timestamp, Document};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use daily::{index_name, parse_index_name, IndexInfo};
pub use derived::{DerivedEntry, DerivedIndexSpec, DerivedMode, DerivedState, RebuildReport};

use daily::{DailyIndex, FieldIndex, StoredDoc};

pub const DEFAULT_RETENTION_DAYS: u32 = 30;
pub const MAX_RETENTION_DAYS: u32 = 40;
pub const MAX_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum DocStoreError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid derived index spec: {0}")]
    InvalidSpec(String),
    #[error("unknown derived index {0}")]
    UnknownDerived(String),
    #[error("derived index {0} already registered")]
    DuplicateDerived(String),
}

pub type Result<T> = std::result::Result<T, DocStoreError>;

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> DocStoreError + '_ {
    move |source| DocStoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocStoreConfig {
    #[serde(default = "default_retention")]
    pub default_retention_days: u32,
    /// Per-doc-type overrides.
    #[serde(default)]
    pub retention_days: BTreeMap<String, u32>,
}

fn default_retention() -> u32 {
    DEFAULT_RETENTION_DAYS
}

impl Default for DocStoreConfig {
    fn default() -> Self {
        DocStoreConfig { default_retention_days: DEFAULT_RETENTION_DAYS, retention_days: BTreeMap::new() }
    }
}

impl DocStoreConfig {
    pub fn validate(&self) -> Result<()> {
        let band = DEFAULT_RETENTION_DAYS..=MAX_RETENTION_DAYS;
        for (what, days) in std::iter::once(("default", &self.default_retention_days)).chain(self.retention_days.iter().map(|(k, v)| (k.as_str(), v))) {
            if !band.contains(days) {
                return Err(DocStoreError::InvalidConfig(format!("retention for {what} is {days} days, must be within 30..=40")));
            }
        }
        Ok(())
    }

    pub fn retention_for(&self, doc_type: &str) -> u32 {
        self.retention_days.get(doc_type).copied().unwrap_or(self.default_retention_days)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocQuery {
    #[serde(rename = "type")]
    pub doc_type: String,
    #[serde(default)]
    pub matchers: Vec<FieldMatcher>,
    pub from: Timestamp,
    pub to: Timestamp,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

fn default_limit() -> usize {
    100
}

impl DocQuery {
    pub fn new(doc_type: impl Into<String>, from: Timestamp, to: Timestamp) -> Self {
        DocQuery { doc_type: doc_type.into(), matchers: Vec::new(), from, to, limit: default_limit() }
    }

    pub fn matching(mut self, m: FieldMatcher) -> Self {
        self.matchers.push(m);
        self
    }

    pub fn limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.from > self.to {
            return Err(DocStoreError::InvalidQuery(format!("from {} is after to {}", self.from, self.to)));
        }
        if !(1..=MAX_LIMIT).contains(&self.limit) {
            return Err(DocStoreError::InvalidQuery(format!("limit {} outside 1..={MAX_LIMIT}", self.limit)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StoreOutcome {
    Stored { index: String },
    Duplicate,
}

pub fn content_hash(doc: &Document) -> [u8; 32] {
    Sha256::digest(doc.canonical_bytes()).into()
}

#[derive(Serialize, Deserialize)]
struct FieldsSidecar {
    docs: u64,
    fields: FieldIndex,
}

#[derive(Serialize, Deserialize, Default)]
struct DerivedSnapshot {
    state: DerivedState,
    /// Documents of each daily index already folded into `state`.
    applied: BTreeMap<String, u64>,
}

struct Derived {
    spec: DerivedIndexSpec,
    snap: DerivedSnapshot,
}

#[derive(Default)]
struct Inner {
    indexes: BTreeMap<String, DailyIndex>,
    hashes: HashSet<[u8; 32]>,
    derived: BTreeMap<String, Derived>,
    next_seq: u64,
    logs: HashMap<String, BufWriter<File>>,
    /// Indexes written since the last sync.
    dirty: HashSet<String>,
}

/// The document store. Writes take an exclusive lock per batch; searches
/// share a read lock and therefore see whole batches only.
pub struct DocStore {
    root: Option<PathBuf>,
    config: DocStoreConfig,
    inner: RwLock<Inner>,
}

impl std::fmt::Debug for DocStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DocStore").field("root", &self.root).field("config", &self.config).finish_non_exhaustive()
    }
}

impl DocStore {
    pub fn in_memory(config: DocStoreConfig) -> Result<Self> {
        config.validate()?;
        Ok(DocStore { root: None, config, inner: RwLock::new(Inner::default()) })
    }

    /// Opens (or creates) a persistent store, replaying every daily log.
    pub fn open(root: impl Into<PathBuf>, config: DocStoreConfig) -> Result<Self> {
        config.validate()?;
        let root = root.into();
        let idx_root = root.join("indexes");
        fs::create_dir_all(&idx_root).map_err(io_at(&idx_root))?;
        fs::create_dir_all(root.join("derived")).map_err(io_at(&root))?;
        let mut inner = Inner::default();

        let mut names: Vec<String> = fs::read_dir(&idx_root)
            .map_err(io_at(&idx_root))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let Some((doc_type, day)) = parse_index_name(&name) else {
                tracing::warn!(%name, "ignoring unrecognized index directory");
                continue;
            };
            let dir = idx_root.join(&name);
            let mut index = DailyIndex::new(name.clone(), doc_type.to_string(), day);
            for doc in read_log(&dir.join("docs.log"))? {
                let bytes = doc.canonical_bytes().len() as u64 + 1;
                inner.hashes.insert(content_hash(&doc));
                let seq = inner.next_seq;
                inner.next_seq += 1;
                let stored = StoredDoc { doc: Arc::new(doc), seq, bytes };
                index.docs.push(stored);
            }
            let sidecar = fs::read(dir.join("fields.idx")).ok().and_then(|b| serde_json::from_slice::<FieldsSidecar>(&b).ok());
            match sidecar {
                Some(s) if s.docs == index.docs.len() as u64 => {
                    index.fields = s.fields;
                    index.bytes = index.docs.iter().map(|d| d.bytes).sum();
                }
                _ => index.rebuild_fields(),
            }
            inner.indexes.insert(name, index);
        }

        let specs_path = root.join("derived").join("specs.json");
        let specs: Vec<DerivedIndexSpec> = match fs::read(&specs_path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| DocStoreError::Corrupt { path: specs_path.clone(), reason: e.to_string() })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_at(&specs_path)(e)),
        };
        for spec in specs {
            let snap_path = root.join("derived").join(format!("{}.json", spec.name));
            let snap: DerivedSnapshot = match fs::read(&snap_path) {
                Ok(b) => serde_json::from_slice(&b).map_err(|e| DocStoreError::Corrupt { path: snap_path.clone(), reason: e.to_string() })?,
                Err(_) => DerivedSnapshot::default(),
            };
            let mut d = Derived { spec, snap };
            catch_up(&mut d, &inner.indexes);
            inner.derived.insert(d.spec.name.clone(), d);
        }
        Ok(DocStore { root: Some(root), config, inner: RwLock::new(inner) })
    }

    pub fn config(&self) -> &DocStoreConfig {
        &self.config
    }

    pub fn index_document(&self, doc: Document) -> Result<StoreOutcome> {
        Ok(self.index_batch(std::iter::once(doc))?.remove(0))
    }

    /// Stores a batch under one lock: searches see all of it or none.
    pub fn index_batch(&self, docs: impl IntoIterator<Item = Document>) -> Result<Vec<StoreOutcome>> {
        let mut inner = self.inner.write();
        let mut out = Vec::new();
        for doc in docs {
            let hash = content_hash(&doc);
            if inner.hashes.contains(&hash) {
                out.push(StoreOutcome::Duplicate);
                continue;
            }
            let name = index_name(&doc.doc_type, doc.timestamp);
            let mut line = doc.canonical_bytes();
            line.push(b'\n');
            if let Some(root) = &self.root {
                let dir = root.join("indexes").join(&name);
                if !inner.logs.contains_key(&name) {
                    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
                    let path = dir.join("docs.log");
                    let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_at(&path))?;
                    inner.logs.insert(name.clone(), BufWriter::new(f));
                }
                let log = inner.logs.get_mut(&name).unwrap();
                log.write_all(&line).map_err(io_at(&dir))?;
                inner.dirty.insert(name.clone());
            }
            let seq = inner.next_seq;
            inner.next_seq += 1;
            inner.hashes.insert(hash);
            let doc = Arc::new(doc);
            let index = inner
                .indexes
                .entry(name.clone())
                .or_insert_with(|| DailyIndex::new(name.clone(), doc.doc_type.clone(), doc.timestamp.date()));
            index.push(StoredDoc { doc: doc.clone(), seq, bytes: line.len() as u64 });
            let count = index.docs.len() as u64;
            for d in inner.derived.values_mut() {
                if d.spec.source_doc_type == doc.doc_type {
                    d.snap.state.apply(&d.spec, &doc, seq);
                    d.snap.applied.insert(name.clone(), count);
                }
            }
            out.push(StoreOutcome::Stored { index: name });
        }
        Ok(out)
    }

    /// Makes every stored document durable and refreshes sidecars.
    pub fn sync(&self) -> Result<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let mut inner = self.inner.write();
        for (name, log) in inner.logs.iter_mut() {
            let path = root.join("indexes").join(name).join("docs.log");
            log.flush().map_err(io_at(&path))?;
            log.get_ref().sync_data().map_err(io_at(&path))?;
        }
        let dirty = std::mem::take(&mut inner.dirty);
        for name in &dirty {
            if let Some(index) = inner.indexes.get(name) {
                let sidecar = FieldsSidecar { docs: index.docs.len() as u64, fields: index.fields.clone() };
                write_atomic(&root.join("indexes").join(name).join("fields.idx"), &serde_json::to_vec(&sidecar).expect("sidecar serializes"))?;
            }
        }
        if !dirty.is_empty() {
            for d in inner.derived.values() {
                write_derived(root, d)?;
            }
        }
        Ok(())
    }

    /// Matching documents, newest first. Only daily indexes intersecting
    /// the time range are visited.
    pub fn search(&self, q: &DocQuery) -> Result<Vec<Document>> {
        q.validate()?;
        let inner = self.inner.read();
        let lo = index_name(&q.doc_type, q.from);
        let hi = index_name(&q.doc_type, q.to);
        let mut hits: Vec<(Timestamp, u64, Arc<Document>)> = Vec::new();
        for index in inner.indexes.range(lo..=hi).map(|(_, i)| i) {
            let mut consider = |d: &StoredDoc| {
                if derived::in_range(d.doc.timestamp, (q.from, q.to)) && q.matchers.iter().all(|m| m.matches(&d.doc)) {
                    hits.push((d.doc.timestamp, d.seq, d.doc.clone()));
                }
            };
            match index.candidates(&q.matchers) {
                Some(positions) => positions.iter().for_each(|p| consider(&index.docs[*p as usize])),
                None => index.docs.iter().for_each(&mut consider),
            }
        }
        hits.sort_by(|a, b| (b.0, b.1).cmp(&(a.0, a.1)));
        hits.truncate(q.limit);
        Ok(hits.into_iter().map(|(_, _, d)| Document::clone(&d)).collect())
    }

    pub fn indexes(&self) -> Vec<IndexInfo> {
        self.inner.read().indexes.values().map(DailyIndex::info).collect()
    }

    pub fn doc_count(&self) -> u64 {
        self.inner.read().indexes.values().map(|i| i.docs.len() as u64).sum()
    }

    /// Drops each daily index more than its type's retention days older
    /// than `now` (by UTC day). Derived indexes are left untouched.
    pub fn apply_doc_retention(&self, now: Timestamp) -> Result<Vec<String>> {
        let today = now.date();
        let mut inner = self.inner.write();
        let expired: Vec<String> = inner
            .indexes
            .values()
            .filter(|i| (today - i.day).num_days() > self.config.retention_for(&i.doc_type) as i64)
            .map(|i| i.name.clone())
            .collect();
        for name in &expired {
            let index = inner.indexes.remove(name).unwrap();
            for d in &index.docs {
                inner.hashes.remove(&content_hash(&d.doc));
            }
            inner.logs.remove(name);
            inner.dirty.remove(name);
            for d in inner.derived.values_mut() {
                d.snap.applied.remove(name);
            }
            if let Some(root) = &self.root {
                let dir = root.join("indexes").join(name);
                fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
            }
        }
        if let (Some(root), false) = (&self.root, expired.is_empty()) {
            for d in inner.derived.values() {
                write_derived(root, d)?;
            }
        }
        Ok(expired)
    }

    /// Registers a derived index and folds in every stored document of its
    /// source type.
    pub fn register_derived(&self, spec: DerivedIndexSpec) -> Result<()> {
        spec.validate().map_err(DocStoreError::InvalidSpec)?;
        let mut inner = self.inner.write();
        if inner.derived.contains_key(&spec.name) {
            return Err(DocStoreError::DuplicateDerived(spec.name));
        }
        let mut d = Derived { spec, snap: DerivedSnapshot::default() };
        catch_up(&mut d, &inner.indexes);
        if let Some(root) = &self.root {
            let mut specs: Vec<&DerivedIndexSpec> = inner.derived.values().map(|d| &d.spec).collect();
            specs.push(&d.spec);
            write_atomic(&root.join("derived").join("specs.json"), &serde_json::to_vec_pretty(&specs).expect("specs serialize"))?;
            write_derived(root, &d)?;
        }
        inner.derived.insert(d.spec.name.clone(), d);
        Ok(())
    }

    pub fn derived_specs(&self) -> Vec<DerivedIndexSpec> {
        self.inner.read().derived.values().map(|d| d.spec.clone()).collect()
    }

    pub fn derived(&self, name: &str) -> Option<DerivedState> {
        self.inner.read().derived.get(name).map(|d| d.snap.state.clone())
    }

    /// Recomputes a derived index from the stored documents whose
    /// timestamps fall in `range` (inclusive), replacing its state.
    pub fn rebuild_derived(&self, name: &str, range: (Timestamp, Timestamp)) -> Result<RebuildReport> {
        let mut inner = self.inner.write();
        let Inner { indexes, derived, .. } = &mut *inner;
        let d = derived.get_mut(name).ok_or_else(|| DocStoreError::UnknownDerived(name.to_string()))?;
        let mut state = DerivedState::default();
        let mut applied = BTreeMap::new();
        for index in indexes.values().filter(|i| i.doc_type == d.spec.source_doc_type) {
            for sd in &index.docs {
                if derived::in_range(sd.doc.timestamp, range) {
                    state.apply(&d.spec, &sd.doc, sd.seq);
                }
            }
            applied.insert(index.name.clone(), index.docs.len() as u64);
        }
        d.snap = DerivedSnapshot { state, applied };
        let report = RebuildReport { entries: d.snap.state.entries.len() as u64, skipped: d.snap.state.skipped };
        if let Some(root) = &self.root {
            write_derived(root, d)?;
        }
        Ok(report)
    }
}

impl Drop for DocStore {
    fn drop(&mut self) {
        if let Err(e) = self.sync() {
            tracing::warn!(error = %e, "docstore sync on drop failed");
        }
    }
}

/// Folds in documents stored after the snapshot was taken.
fn catch_up(d: &mut Derived, indexes: &BTreeMap<String, DailyIndex>) {
    for index in indexes.values().filter(|i| i.doc_type == d.spec.source_doc_type) {
        let done = d.snap.applied.get(&index.name).copied().unwrap_or(0) as usize;
        for sd in index.docs.iter().skip(done) {
            d.snap.state.apply(&d.spec, &sd.doc, sd.seq);
        }
        d.snap.applied.insert(index.name.clone(), index.docs.len() as u64);
    }
}

fn write_derived(root: &Path, d: &Derived) -> Result<()> {
    write_atomic(&root.join("derived").join(format!("{}.json", d.spec.name)), &serde_json::to_vec(&d.snap).expect("snapshot serializes"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes).map_err(io_at(&tmp))?;
    f.sync_all().map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

/// Reads a docs.log, cutting off a torn final line left by a crash.
fn read_log(path: &Path) -> Result<Vec<Document>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut reader = BufReader::new(f);
    let mut docs = Vec::new();
    let mut good_len = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_at(path))?;
        if n == 0 {
            break;
        }
        if line.last() != Some(&b'\n') {
            break;
        }
        match Document::from_canonical(&line[..line.len() - 1]) {
            Ok(doc) => docs.push(doc),
            Err(e) => return Err(DocStoreError::Corrupt { path: path.to_path_buf(), reason: format!("line {}: {e}", docs.len() + 1) }),
        }
        good_len += n as u64;
    }
    let actual = fs::metadata(path).map_err(io_at(path))?.len();
    if actual > good_len {
        tracing::warn!(path = %path.display(), dropped = actual - good_len, "truncating torn tail of document log");
        OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(good_len)).map_err(io_at(path))?;
    }
    Ok(docs)
}
