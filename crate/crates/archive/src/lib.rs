//! Long-term archive partitioned by document type and UTC day.
//!
//! ```text
//! <root>/<doc_type>/<YYYY-MM-DD>/open.jsonl           OPEN partition, one canonical record per line
//! <root>/<doc_type>/<YYYY-MM-DD>/late.jsonl           records that arrived after compaction
//! <root>/<doc_type>/<YYYY-MM-DD>/compacted/header.bin see [`format`]
//! <root>/<doc_type>/<YYYY-MM-DD>/compacted/blocks.dat
//! <root>/<doc_type>/<YYYY-MM-DD>/compact.tmp/         compaction in progress
//! ```
//!
//! Compaction writes into `compact.tmp`, renames it to `compacted`, then
//! removes `open.jsonl`. Opening the archive finishes or rolls back any of
//! those steps, so a crash never loses a record.

pub mod format;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use minimon_core::{validate_name, Document, FieldMatcher, Timestamp, DAY_MS, HOUR_MS};
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use format::{Header, CODEC_DEFLATE};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt partition file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("invalid doc type {0:?}")]
    InvalidDocType(String),
    #[error("record of type {found} appended under {expected}")]
    TypeMismatch { expected: String, found: String },
    #[error("no partition {doc_type}/{day}")]
    UnknownPartition { doc_type: String, day: NaiveDate },
    #[error("partition {doc_type}/{day} is not eligible for compaction until {eligible_at}")]
    NotEligible { doc_type: String, day: NaiveDate, eligible_at: Timestamp },
    #[error("injected fault at {0:?}")]
    Fault(CompactStep),
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io { path: path.to_path_buf(), source }
}

/// I/O steps of a compaction, in order. A fault injected at a step aborts
/// the compaction right before it, leaving the files as a crash would.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CompactStep {
    CreateTemp,
    WriteBlocks,
    WriteHeader,
    SyncTemp,
    Rename,
    SyncPartition,
    RemoveOpen,
}

impl CompactStep {
    pub const ALL: [CompactStep; 7] = [
        CompactStep::CreateTemp,
        CompactStep::WriteBlocks,
        CompactStep::WriteHeader,
        CompactStep::SyncTemp,
        CompactStep::Rename,
        CompactStep::SyncPartition,
        CompactStep::RemoveOpen,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PartitionState {
    Open,
    Compacted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AppendOutcome {
    Appended,
    RoutedToLateSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionInfo {
    pub doc_type: String,
    pub day: NaiveDate,
    pub state: PartitionState,
    pub raw_bytes: u64,
    pub compacted_bytes: u64,
    pub record_count: u64,
    pub late_records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactionReport {
    pub doc_type: String,
    pub day: NaiveDate,
    pub duplicates_removed: u64,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub reduction_ratio: f64,
}

#[derive(Debug)]
struct Partition {
    doc_type: String,
    day: NaiveDate,
    dir: PathBuf,
    state: PartitionState,
    /// Open log (OPEN) or late sidecar (COMPACTED), opened lazily.
    writer: Option<File>,
    /// Bytes of the open log, or the raw size recorded in the header.
    raw_bytes: u64,
    compacted_bytes: u64,
    records: u64,
    late_records: u64,
    late_bytes: u64,
    header: Option<Header>,
}

type PartKey = (String, NaiveDate);

pub struct Archive {
    root: PathBuf,
    partitions: Mutex<BTreeMap<PartKey, Arc<Mutex<Partition>>>>,
    fail_at: Mutex<Option<CompactStep>>,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive").field("root", &self.root).finish_non_exhaustive()
    }
}

fn day_dir_name(day: NaiveDate) -> String {
    day.format("%Y-%m-%d").to_string()
}

fn day_end(day: NaiveDate) -> Timestamp {
    Timestamp::from_date(day).add_millis(DAY_MS)
}

impl Archive {
    /// Opens the archive, recovering any interrupted compaction.
    pub fn open(root: impl Into<PathBuf>) -> Result<Archive> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_at(&root))?;
        let mut partitions = BTreeMap::new();
        for type_entry in fs::read_dir(&root).map_err(io_at(&root))? {
            let type_entry = type_entry.map_err(io_at(&root))?;
            let doc_type = type_entry.file_name().to_string_lossy().into_owned();
            if !type_entry.path().is_dir() || !validate_name(&doc_type) {
                continue;
            }
            for day_entry in fs::read_dir(type_entry.path()).map_err(io_at(&type_entry.path()))? {
                let day_entry = day_entry.map_err(io_at(&type_entry.path()))?;
                let Ok(day) = NaiveDate::parse_from_str(&day_entry.file_name().to_string_lossy(), "%Y-%m-%d") else { continue };
                let p = recover_partition(doc_type.clone(), day, day_entry.path())?;
                partitions.insert((doc_type.clone(), day), Arc::new(Mutex::new(p)));
            }
        }
        Ok(Archive { root, partitions: Mutex::new(partitions), fail_at: Mutex::new(None) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Makes the next compaction stop right before `step`, as if the
    /// process had died there. Used by crash-safety tests.
    #[doc(hidden)]
    pub fn set_fail_point(&self, step: Option<CompactStep>) {
        *self.fail_at.lock() = step;
    }

    fn partition(&self, doc_type: &str, day: NaiveDate, create: bool) -> Option<Arc<Mutex<Partition>>> {
        let mut parts = self.partitions.lock();
        let key = (doc_type.to_string(), day);
        if let Some(p) = parts.get(&key) {
            return Some(p.clone());
        }
        if !create {
            return None;
        }
        let dir = self.root.join(doc_type).join(day_dir_name(day));
        let p = Arc::new(Mutex::new(Partition {
            doc_type: doc_type.to_string(),
            day,
            dir,
            state: PartitionState::Open,
            writer: None,
            raw_bytes: 0,
            compacted_bytes: 0,
            records: 0,
            late_records: 0,
            late_bytes: 0,
            header: None,
        }));
        parts.insert(key, p.clone());
        Some(p)
    }

    /// Appends records in arrival order to the partition of each record's
    /// UTC day. Records for a compacted day go to its late sidecar.
    pub fn append(&self, doc_type: &str, records: &[Document]) -> Result<Vec<AppendOutcome>> {
        if !validate_name(doc_type) {
            return Err(ArchiveError::InvalidDocType(doc_type.to_string()));
        }
        let mut out = Vec::with_capacity(records.len());
        // group consecutive records by day so each partition is locked once per run
        let mut i = 0;
        while i < records.len() {
            let day = records[i].timestamp.date();
            let mut j = i;
            let mut buf = Vec::new();
            while j < records.len() && records[j].timestamp.date() == day {
                let r = &records[j];
                if r.doc_type != doc_type {
                    return Err(ArchiveError::TypeMismatch { expected: doc_type.to_string(), found: r.doc_type.clone() });
                }
                buf.extend_from_slice(&r.canonical_bytes());
                buf.push(b'\n');
                j += 1;
            }
            let n = (j - i) as u64;
            let part = self.partition(doc_type, day, true).unwrap();
            let mut p = part.lock();
            let late = p.state == PartitionState::Compacted;
            let file = if late { "late.jsonl" } else { "open.jsonl" };
            if p.writer.is_none() {
                fs::create_dir_all(&p.dir).map_err(io_at(&p.dir))?;
                let path = p.dir.join(file);
                p.writer = Some(OpenOptions::new().create(true).append(true).open(&path).map_err(io_at(&path))?);
            }
            let path = p.dir.join(file);
            p.writer.as_mut().unwrap().write_all(&buf).map_err(io_at(&path))?;
            if late {
                p.late_records += n;
                p.late_bytes += buf.len() as u64;
            } else {
                p.records += n;
                p.raw_bytes += buf.len() as u64;
            }
            let outcome = if late { AppendOutcome::RoutedToLateSidecar } else { AppendOutcome::Appended };
            out.extend(std::iter::repeat_n(outcome, n as usize));
            i = j;
        }
        Ok(out)
    }

    /// Flushes every partition writer to stable storage.
    pub fn sync(&self) -> Result<()> {
        let parts: Vec<_> = self.partitions.lock().values().cloned().collect();
        for part in parts {
            let p = part.lock();
            if let Some(w) = &p.writer {
                w.sync_data().map_err(io_at(&p.dir))?;
            }
        }
        Ok(())
    }

    /// Deduplicates and block-compresses one fully elapsed OPEN partition.
    /// Compacting an already compacted partition reports zero changes.
    pub fn compact(&self, doc_type: &str, day: NaiveDate, now: Timestamp) -> Result<CompactionReport> {
        let part = self.partition(doc_type, day, false).ok_or_else(|| ArchiveError::UnknownPartition { doc_type: doc_type.to_string(), day })?;
        let mut p = part.lock();
        if p.state == PartitionState::Compacted {
            let size = p.compacted_bytes;
            return Ok(CompactionReport { doc_type: doc_type.to_string(), day, duplicates_removed: 0, bytes_before: size, bytes_after: size, reduction_ratio: 0.0 });
        }
        let eligible_at = day_end(day).add_millis(HOUR_MS);
        if now < eligible_at {
            return Err(ArchiveError::NotEligible { doc_type: doc_type.to_string(), day, eligible_at });
        }
        if let Some(w) = p.writer.take() {
            w.sync_data().map_err(io_at(&p.dir))?;
        }
        let fail_at = *self.fail_at.lock();
        let fault = |step: CompactStep| if fail_at == Some(step) { Err(ArchiveError::Fault(step)) } else { Ok(()) };

        let open_path = p.dir.join("open.jsonl");
        let lines = read_lines(&open_path)?;
        let bytes_before: u64 = lines.iter().map(|l| l.len() as u64 + 1).sum();
        let total = lines.len() as u64;
        let mut seen = HashSet::with_capacity(lines.len());
        let survivors: Vec<Vec<u8>> = lines.into_iter().filter(|l| seen.insert(l.clone())).collect();
        let duplicates_removed = total - survivors.len() as u64;
        let (data, blocks) = format::build_blocks(&survivors);
        let header = Header { codec: CODEC_DEFLATE, record_count: survivors.len() as u64, raw_bytes: bytes_before, duplicates_removed, blocks };
        let header_bytes = header.encode();

        let tmp = p.dir.join("compact.tmp");
        let done = p.dir.join("compacted");
        fault(CompactStep::CreateTemp)?;
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_at(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_at(&tmp))?;
        fault(CompactStep::WriteBlocks)?;
        write_synced(&tmp.join("blocks.dat"), &data)?;
        fault(CompactStep::WriteHeader)?;
        write_synced(&tmp.join("header.bin"), &header_bytes)?;
        fault(CompactStep::SyncTemp)?;
        sync_dir(&tmp)?;
        fault(CompactStep::Rename)?;
        fs::rename(&tmp, &done).map_err(io_at(&done))?;
        fault(CompactStep::SyncPartition)?;
        sync_dir(&p.dir)?;
        fault(CompactStep::RemoveOpen)?;
        fs::remove_file(&open_path).map_err(io_at(&open_path))?;
        sync_dir(&p.dir)?;

        let bytes_after = (data.len() + header_bytes.len()) as u64;
        p.state = PartitionState::Compacted;
        p.compacted_bytes = bytes_after;
        p.raw_bytes = bytes_before;
        p.records = header.record_count;
        p.header = Some(header);
        let reduction_ratio = if bytes_before == 0 { 0.0 } else { 1.0 - bytes_after as f64 / bytes_before as f64 };
        Ok(CompactionReport { doc_type: doc_type.to_string(), day, duplicates_removed, bytes_before, bytes_after, reduction_ratio })
    }

    /// Compacts every OPEN partition whose day ended at least an hour ago.
    pub fn compact_eligible(&self, now: Timestamp) -> Vec<Result<CompactionReport>> {
        let keys: Vec<PartKey> = self.partitions.lock().keys().cloned().collect();
        keys.into_iter()
            .filter(|(_, day)| day_end(*day).add_millis(HOUR_MS) <= now)
            .filter(|k| self.partitions.lock().get(k).is_some_and(|p| p.lock().state == PartitionState::Open))
            .map(|(t, d)| self.compact(&t, d, now))
            .collect()
    }

    /// Records of one day (main partition, then late sidecar) that satisfy
    /// every matcher, in stored order. Appends that complete after the
    /// call starts are not included.
    pub fn read(&self, doc_type: &str, day: NaiveDate, matchers: &[FieldMatcher]) -> Result<Vec<Document>> {
        let Some(part) = self.partition(doc_type, day, false) else { return Ok(Vec::new()) };
        // snapshot under the lock, decode outside it
        let (main, late_path, late_len) = {
            let p = part.lock();
            let main = match p.state {
                PartitionState::Open => Snapshot::Open(p.dir.join("open.jsonl"), p.raw_bytes),
                PartitionState::Compacted => Snapshot::Compacted(p.dir.join("compacted"), p.header.clone().expect("compacted partitions carry a header")),
            };
            (main, p.dir.join("late.jsonl"), p.late_bytes)
        };
        let mut lines = match main {
            Snapshot::Open(path, len) => read_prefix(&path, len)?,
            Snapshot::Compacted(dir, header) => {
                let data_path = dir.join("blocks.dat");
                let data = fs::read(&data_path).map_err(io_at(&data_path))?;
                let mut out = Vec::with_capacity(header.record_count as usize);
                for b in &header.blocks {
                    out.extend(format::read_block(&data, b).map_err(|reason| ArchiveError::Corrupt { path: data_path.clone(), reason })?);
                }
                out
            }
        };
        lines.extend(read_prefix(&late_path, late_len)?);
        let mut docs = Vec::with_capacity(lines.len());
        for l in lines {
            let doc = Document::from_canonical(&l).map_err(|e| ArchiveError::Corrupt { path: self.root.join(doc_type), reason: e.to_string() })?;
            if matchers.iter().all(|m| m.matches(&doc)) {
                docs.push(doc);
            }
        }
        Ok(docs)
    }

    pub fn partitions(&self) -> Vec<PartitionInfo> {
        let parts: Vec<_> = self.partitions.lock().values().cloned().collect();
        parts
            .iter()
            .map(|part| {
                let p = part.lock();
                PartitionInfo {
                    doc_type: p.doc_type.clone(),
                    day: p.day,
                    state: p.state,
                    raw_bytes: p.raw_bytes,
                    compacted_bytes: p.compacted_bytes,
                    record_count: p.records,
                    late_records: p.late_records,
                }
            })
            .collect()
    }
}

impl Drop for Archive {
    fn drop(&mut self) {
        if let Err(e) = self.sync() {
            tracing::warn!(error = %e, "archive sync on drop failed");
        }
    }
}

enum Snapshot {
    Open(PathBuf, u64),
    Compacted(PathBuf, Header),
}

fn recover_partition(doc_type: String, day: NaiveDate, dir: PathBuf) -> Result<Partition> {
    let tmp = dir.join("compact.tmp");
    let done = dir.join("compacted");
    let open_path = dir.join("open.jsonl");
    let header = if done.exists() {
        let hpath = done.join("header.bin");
        match fs::read(&hpath).map_err(|e| e.to_string()).and_then(|b| Header::decode(&b)) {
            Ok(h) => Some(h),
            Err(reason) if open_path.exists() => {
                tracing::warn!(path = %hpath.display(), %reason, "discarding unusable compaction output");
                fs::remove_dir_all(&done).map_err(io_at(&done))?;
                None
            }
            Err(reason) => return Err(ArchiveError::Corrupt { path: hpath, reason }),
        }
    } else {
        None
    };
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_at(&tmp))?;
    }
    let late_path = dir.join("late.jsonl");
    let late = repair_tail(&late_path)?;
    let mut p = Partition {
        doc_type,
        day,
        dir,
        state: PartitionState::Open,
        writer: None,
        raw_bytes: 0,
        compacted_bytes: 0,
        records: 0,
        late_records: late.0,
        late_bytes: late.1,
        header: None,
    };
    match header {
        Some(h) => {
            // the rename landed; finish removing the open log if it survived
            if open_path.exists() {
                fs::remove_file(&open_path).map_err(io_at(&open_path))?;
                sync_dir(&p.dir)?;
            }
            let data_len = fs::metadata(done.join("blocks.dat")).map_err(io_at(&done))?.len();
            p.state = PartitionState::Compacted;
            p.compacted_bytes = data_len + h.encode().len() as u64;
            p.raw_bytes = h.raw_bytes;
            p.records = h.record_count;
            p.header = Some(h);
        }
        None => {
            let (records, bytes) = repair_tail(&open_path)?;
            p.records = records;
            p.raw_bytes = bytes;
        }
    }
    Ok(p)
}

/// Counts complete lines and truncates a torn final line.
fn repair_tail(path: &Path) -> Result<(u64, u64)> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((0, 0)),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut reader = BufReader::new(f);
    let (mut count, mut good) = (0u64, 0u64);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_at(path))?;
        if n == 0 || line.last() != Some(&b'\n') {
            break;
        }
        count += 1;
        good += n as u64;
    }
    let len = fs::metadata(path).map_err(io_at(path))?.len();
    if len > good {
        tracing::warn!(path = %path.display(), dropped = len - good, "truncating torn archive tail");
        OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(good)).map_err(io_at(path))?;
    }
    Ok((count, good))
}

fn read_lines(path: &Path) -> Result<Vec<Vec<u8>>> {
    let len = match fs::metadata(path) {
        Ok(m) => m.len(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
        Err(e) => return Err(io_at(path)(e)),
    };
    read_prefix(path, len)
}

/// Lines within the first `len` bytes of a file.
fn read_prefix(path: &Path, len: u64) -> Result<Vec<Vec<u8>>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let mut bytes = Vec::with_capacity(len as usize);
    use std::io::Read;
    File::open(path).map_err(io_at(path))?.take(len).read_to_end(&mut bytes).map_err(io_at(path))?;
    Ok(bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(<[u8]>::to_vec).collect())
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(io_at(path))?;
    f.write_all(bytes).map_err(io_at(path))?;
    f.sync_all().map_err(io_at(path))
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_at(dir))
}
