use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::schema::{ProducerRegistration, SchemaProblem};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("producer {producer}/{doc_type} is already registered")]
    Duplicate { producer: String, doc_type: String },
    #[error("invalid registration ({:?}): {}", .0.reason, .0.detail)]
    Invalid(SchemaProblem),
    #[error("registry storage error: {0}")]
    Io(#[from] io::Error),
    #[error("registry file is corrupt: {0}")]
    Corrupt(String),
}

type Key = (String, String);

/// Registered producers keyed by (producer, doc_type). Reads are
/// concurrent; writes are serialized and persisted before they return.
#[derive(Debug, Default)]
pub struct Registry {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<Key, Arc<ProducerRegistration>>>,
    write: Mutex<()>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry::default()
    }

    /// Loads `path` if present; later registrations are saved there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        match fs::read(&path) {
            Ok(bytes) => {
                let regs: Vec<ProducerRegistration> = serde_json::from_slice(&bytes).map_err(|e| RegistryError::Corrupt(e.to_string()))?;
                for r in regs {
                    entries.insert(r.key(), Arc::new(r));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Registry { path: Some(path), entries: RwLock::new(entries), write: Mutex::new(()) })
    }

    pub fn register(&self, reg: ProducerRegistration, replace: bool) -> Result<(), RegistryError> {
        reg.validate().map_err(RegistryError::Invalid)?;
        let _serial = self.write.lock();
        let key = reg.key();
        if !replace && self.entries.read().contains_key(&key) {
            return Err(RegistryError::Duplicate { producer: key.0, doc_type: key.1 });
        }
        let mut next = self.entries.read().clone();
        next.insert(key, Arc::new(reg));
        self.persist(&next)?;
        *self.entries.write() = next;
        Ok(())
    }

    pub fn get(&self, producer: &str, doc_type: &str) -> Option<Arc<ProducerRegistration>> {
        self.entries.read().get(&(producer.to_string(), doc_type.to_string())).cloned()
    }

    pub fn list(&self) -> Vec<Arc<ProducerRegistration>> {
        self.entries.read().values().cloned().collect()
    }

    /// Registrations for a document type, whichever producer owns them.
    pub fn for_type(&self, doc_type: &str) -> Vec<Arc<ProducerRegistration>> {
        self.entries.read().values().filter(|r| r.doc_type == doc_type).cloned().collect()
    }

    fn persist(&self, entries: &BTreeMap<Key, Arc<ProducerRegistration>>) -> Result<(), RegistryError> {
        let Some(path) = &self.path else { return Ok(()) };
        let list: Vec<&ProducerRegistration> = entries.values().map(|r| r.as_ref()).collect();
        let bytes = serde_json::to_vec_pretty(&list).expect("registrations serialize");
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)?;
        fs::File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
