//! Checkpoint layout under a data directory:
//!
//! ```text
//! index.ckpt                   JSON: horizons, series ids, first-seen times
//! series/<hash>/key            canonical series key
//! series/<hash>/raw.blk        (u64 BE ts, f64 BE value) pairs, sorted by ts
//! series/<hash>/bins.json      finalized bins per resolution
//! ```
//!
//! `<hash>` is the first 16 bytes of SHA-256 over the canonical key, in hex.
//! Every file is written to a temporary name and renamed into place;
//! `index.ckpt` is renamed last and only lists series already on disk.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;

use minimon_core::{Resolution, SeriesKey, SharedClock, Timestamp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bin::Summary;
use crate::store::{SeriesData, Table, Tsdb, TsdbConfig, TIERS};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt checkpoint file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize, Deserialize)]
struct IndexCheckpoint {
    horizons: [u64; 5],
    floors: [u64; 6],
    series: Vec<SeriesKey>,
    first_seen: Vec<(SeriesKey, Timestamp)>,
}

type BinFile = BTreeMap<Resolution, Vec<(u64, Summary)>>;

pub fn series_dir_name(key: &SeriesKey) -> String {
    let digest = Sha256::digest(key.canonical().as_bytes());
    hex::encode(&digest[..16])
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes).map_err(io_at(&tmp))?;
    f.sync_all().map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

fn encode_raw(raw: &[(u64, f64)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() * 16);
    for (t, v) in raw {
        out.extend_from_slice(&t.to_be_bytes());
        out.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    out
}

fn decode_raw(bytes: &[u8], path: &Path) -> Result<Vec<(u64, f64)>, PersistError> {
    if bytes.len() % 16 != 0 {
        return Err(PersistError::Corrupt { path: path.to_path_buf(), reason: "length is not a multiple of 16".into() });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| (u64::from_be_bytes(c[..8].try_into().unwrap()), f64::from_bits(u64::from_be_bytes(c[8..].try_into().unwrap()))))
        .collect())
}

impl Tsdb {
    /// Writes a consistent snapshot of every series and the index state.
    pub fn checkpoint(&self, dir: &Path) -> Result<(), PersistError> {
        let series_root = dir.join("series");
        fs::create_dir_all(&series_root).map_err(io_at(&series_root))?;
        let table = self.table.read();
        let mut live = HashSet::new();
        let mut keys = Vec::with_capacity(table.series.len());
        for series in table.series.values() {
            let s = series.read();
            let name = series_dir_name(&s.key);
            let sdir = series_root.join(&name);
            fs::create_dir_all(&sdir).map_err(io_at(&sdir))?;
            write_atomic(&sdir.join("key"), s.key.canonical().as_bytes())?;
            write_atomic(&sdir.join("raw.blk"), &encode_raw(&s.raw))?;
            let bins: BinFile = TIERS.iter().zip(&s.bins).map(|(r, b)| (*r, b.iter().map(|(k, v)| (*k, *v)).collect())).collect();
            write_atomic(&sdir.join("bins.json"), &serde_json::to_vec(&bins).expect("bins serialize"))?;
            live.insert(name);
            keys.push(s.key.clone());
        }
        let mut first_seen: Vec<(SeriesKey, Timestamp)> = table.first_seen.iter().map(|(k, t)| (k.clone(), *t)).collect();
        first_seen.sort();
        let ckpt = IndexCheckpoint {
            horizons: std::array::from_fn(|i| self.horizons[i].load(Ordering::SeqCst)),
            floors: std::array::from_fn(|i| self.floors[i].load(Ordering::SeqCst)),
            series: keys,
            first_seen,
        };
        drop(table);
        write_atomic(&dir.join("index.ckpt"), &serde_json::to_vec(&ckpt).expect("index serializes"))?;

        for entry in fs::read_dir(&series_root).map_err(io_at(&series_root))? {
            let entry = entry.map_err(io_at(&series_root))?;
            if !live.contains(entry.file_name().to_string_lossy().as_ref()) {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
        Ok(())
    }

    /// Restores a store from `dir`. A missing checkpoint yields an empty store.
    pub fn open(dir: &Path, config: TsdbConfig, clock: SharedClock) -> Result<Tsdb, PersistError> {
        let db = Tsdb::new(config, clock);
        let ckpt_path = dir.join("index.ckpt");
        let bytes = match fs::read(&ckpt_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(db),
            Err(e) => return Err(io_at(&ckpt_path)(e)),
        };
        let ckpt: IndexCheckpoint = serde_json::from_slice(&bytes)
            .map_err(|e| PersistError::Corrupt { path: ckpt_path.clone(), reason: e.to_string() })?;
        for (i, h) in ckpt.horizons.iter().enumerate() {
            db.horizons[i].store(*h, Ordering::SeqCst);
        }
        for (i, f) in ckpt.floors.iter().enumerate() {
            db.floors[i].store(*f, Ordering::SeqCst);
        }
        let mut table = Table { first_seen: ckpt.first_seen.into_iter().collect::<HashMap<_, _>>(), ..Default::default() };
        let mut points = 0u64;
        for key in ckpt.series {
            let sdir = dir.join("series").join(series_dir_name(&key));
            let key_path = sdir.join("key");
            let stored = fs::read_to_string(&key_path).map_err(io_at(&key_path))?;
            if stored != key.canonical() {
                return Err(PersistError::Corrupt { path: key_path, reason: "series key does not match its directory".into() });
            }
            let raw_path = sdir.join("raw.blk");
            let raw = decode_raw(&fs::read(&raw_path).map_err(io_at(&raw_path))?, &raw_path)?;
            let bins_path = sdir.join("bins.json");
            let file: BinFile = serde_json::from_slice(&fs::read(&bins_path).map_err(io_at(&bins_path))?)
                .map_err(|e| PersistError::Corrupt { path: bins_path.clone(), reason: e.to_string() })?;
            let mut data = SeriesData { key, raw, bins: Default::default() };
            for (i, res) in TIERS.iter().enumerate() {
                if let Some(list) = file.get(res) {
                    data.bins[i] = list.iter().copied().collect();
                }
            }
            points += data.raw.len() as u64;
            table.first_seen.entry(data.key.clone()).or_insert_with(|| db.clock.now());
            table.add_series(data);
        }
        db.total_points.store(points, Ordering::Relaxed);
        *db.table.write() = table;
        Ok(db)
    }
}
