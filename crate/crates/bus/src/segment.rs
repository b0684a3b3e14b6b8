//! On-disk topic segment.
//!
//! A topic directory holds one live segment named after its base offset:
//!
//! ```text
//! topics/<topic>/<base_offset:020>.log   frames: u32 BE length | payload | u32 BE CRC32(payload)
//! topics/<topic>/<base_offset:020>.tix   one u64 BE enqueue time (ms) per frame, same order
//! ```
//!
//! The `.log` file is the source of truth. A torn or corrupt tail frame is
//! cut off on open; missing `.tix` entries are filled with the recovery time.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use minimon_core::Timestamp;

pub(crate) const FRAME_OVERHEAD: u64 = 8;

#[derive(Debug, Clone)]
pub(crate) struct StoredRecord {
    pub payload: Arc<[u8]>,
    pub enqueued_at: Timestamp,
}

pub(crate) struct Segment {
    dir: PathBuf,
    pub base_offset: u64,
    pub records: Vec<StoredRecord>,
    log: File,
    tix: File,
    log_len: u64,
    last_sync: Instant,
    dirty: bool,
}

fn log_path(dir: &Path, base: u64) -> PathBuf {
    dir.join(format!("{base:020}.log"))
}

fn tix_path(dir: &Path, base: u64) -> PathBuf {
    dir.join(format!("{base:020}.tix"))
}

pub(crate) fn encode_frame(payload: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_be_bytes());
}

/// Decodes consecutive frames, returning the payloads and the byte length
/// of the valid prefix.
pub(crate) fn decode_frames(bytes: &[u8]) -> (Vec<Vec<u8>>, u64) {
    let mut pos = 0usize;
    let mut out = Vec::new();
    while pos + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos + 4 + len + 4;
        if end > bytes.len() {
            break;
        }
        let payload = &bytes[pos + 4..pos + 4 + len];
        let crc = u32::from_be_bytes(bytes[end - 4..end].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            break;
        }
        out.push(payload.to_vec());
        pos = end;
    }
    (out, pos as u64)
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

impl Segment {
    pub fn create(dir: &Path, now: Timestamp) -> io::Result<Segment> {
        fs::create_dir_all(dir)?;
        Self::open(dir, now)
    }

    /// Opens the newest segment in `dir`, repairing torn tails and removing
    /// leftovers of an interrupted truncation.
    pub fn open(dir: &Path, now: Timestamp) -> io::Result<Segment> {
        let mut bases = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(".tmp") {
                fs::remove_file(dir.join(&name))?;
            } else if let Some(stem) = name.strip_suffix(".log") {
                if let Ok(base) = stem.parse::<u64>() {
                    bases.push(base);
                }
            }
        }
        bases.sort_unstable();
        let base = bases.last().copied().unwrap_or(0);
        for stale in &bases[..bases.len().saturating_sub(1)] {
            let _ = fs::remove_file(log_path(dir, *stale));
            let _ = fs::remove_file(tix_path(dir, *stale));
        }

        let mut log = OpenOptions::new().read(true).append(true).create(true).open(log_path(dir, base))?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;
        let (payloads, valid_len) = decode_frames(&bytes);
        if valid_len < bytes.len() as u64 {
            tracing::warn!(dir = %dir.display(), dropped = bytes.len() as u64 - valid_len, "truncating torn log tail");
            log.set_len(valid_len)?;
            log.sync_data()?;
        }

        let mut tix = OpenOptions::new().read(true).append(true).create(true).open(tix_path(dir, base))?;
        let mut tix_bytes = Vec::new();
        tix.read_to_end(&mut tix_bytes)?;
        let mut times: Vec<Timestamp> =
            tix_bytes.chunks_exact(8).map(|c| Timestamp::from_millis(u64::from_be_bytes(c.try_into().unwrap()))).collect();
        if times.len() != payloads.len() || tix_bytes.len() % 8 != 0 {
            times.truncate(payloads.len());
            times.resize(payloads.len(), now);
            tix.set_len(0)?;
            let mut buf = Vec::with_capacity(times.len() * 8);
            for t in &times {
                buf.extend_from_slice(&t.as_millis().to_be_bytes());
            }
            tix.write_all(&buf)?;
            tix.sync_data()?;
        }

        let records = payloads
            .into_iter()
            .zip(times)
            .map(|(p, enqueued_at)| StoredRecord { payload: p.into(), enqueued_at })
            .collect();
        Ok(Segment {
            dir: dir.to_path_buf(),
            base_offset: base,
            records,
            log,
            tix,
            log_len: valid_len,
            last_sync: Instant::now(),
            dirty: false,
        })
    }

    pub fn next_offset(&self) -> u64 {
        self.base_offset + self.records.len() as u64
    }

    /// Appends one frame. On error the files are cut back to their previous
    /// length so no partial frame survives.
    pub fn append(&mut self, payload: &[u8], now: Timestamp) -> io::Result<u64> {
        let mut frame = Vec::with_capacity(payload.len() + FRAME_OVERHEAD as usize);
        encode_frame(payload, &mut frame);
        let tix_len = self.records.len() as u64 * 8;
        let result = self.log.write_all(&frame).and_then(|_| self.tix.write_all(&now.as_millis().to_be_bytes()));
        if let Err(e) = result {
            let _ = self.log.set_len(self.log_len);
            let _ = self.tix.set_len(tix_len);
            return Err(e);
        }
        self.log_len += frame.len() as u64;
        let offset = self.next_offset();
        self.records.push(StoredRecord { payload: payload.into(), enqueued_at: now });
        self.dirty = true;
        Ok(offset)
    }

    pub fn sync_if_due(&mut self, interval: std::time::Duration) -> io::Result<()> {
        if self.dirty && self.last_sync.elapsed() >= interval {
            self.sync()?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        if self.dirty {
            self.log.sync_data()?;
            self.tix.sync_data()?;
            self.dirty = false;
        }
        self.last_sync = Instant::now();
        Ok(())
    }

    /// Drops every record below `new_base` by writing a replacement segment
    /// and swapping it in. The rename of the new `.log` is the commit point.
    pub fn truncate_front(&mut self, new_base: u64) -> io::Result<()> {
        if new_base <= self.base_offset {
            return Ok(());
        }
        let skip = ((new_base - self.base_offset) as usize).min(self.records.len());
        let new_base = self.base_offset + skip as u64;
        let survivors = &self.records[skip..];

        let mut log_buf = Vec::new();
        let mut tix_buf = Vec::with_capacity(survivors.len() * 8);
        for r in survivors {
            encode_frame(&r.payload, &mut log_buf);
            tix_buf.extend_from_slice(&r.enqueued_at.as_millis().to_be_bytes());
        }
        let tmp_log = self.dir.join(format!("{new_base:020}.log.tmp"));
        let tmp_tix = self.dir.join(format!("{new_base:020}.tix.tmp"));
        for (path, buf) in [(&tmp_log, &log_buf), (&tmp_tix, &tix_buf)] {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(buf)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp_tix, tix_path(&self.dir, new_base))?;
        fs::rename(&tmp_log, log_path(&self.dir, new_base))?;
        sync_dir(&self.dir)?;
        let _ = fs::remove_file(log_path(&self.dir, self.base_offset));
        let _ = fs::remove_file(tix_path(&self.dir, self.base_offset));

        self.log = OpenOptions::new().read(true).append(true).open(log_path(&self.dir, new_base))?;
        self.tix = OpenOptions::new().read(true).append(true).open(tix_path(&self.dir, new_base))?;
        self.log_len = log_buf.len() as u64;
        self.records.drain(..skip);
        self.base_offset = new_base;
        self.dirty = false;
        Ok(())
    }
}

/// Reads every frame of a log file without repairing it.
pub fn read_log_file(path: &Path) -> io::Result<Vec<Vec<u8>>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(decode_frames(&bytes).0)
}
