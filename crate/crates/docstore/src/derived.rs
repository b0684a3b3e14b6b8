use std::collections::BTreeMap;

use minimon_core::{validate_name, Document, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DerivedMode {
    LatestByTimestamp,
    NumericSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedIndexSpec {
    pub name: String,
    pub source_doc_type: String,
    pub key_field: String,
    pub mode: DerivedMode,
    #[serde(default)]
    pub value_fields: Vec<String>,
}

impl DerivedIndexSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !validate_name(&self.name) || !validate_name(&self.source_doc_type) {
            return Err("derived index name and source type must be identifiers".into());
        }
        if self.key_field.is_empty() {
            return Err("key_field is required".into());
        }
        if self.mode == DerivedMode::NumericSum && self.value_fields.is_empty() {
            return Err("NUMERIC_SUM needs at least one value field".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DerivedEntry {
    Latest { doc: Document, seq: u64 },
    Sum { sums: BTreeMap<String, f64>, docs: u64 },
}

/// Materialized state of one derived index, keyed by the rendered value of
/// the key field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedState {
    pub entries: BTreeMap<String, DerivedEntry>,
    /// Documents that lacked the key field.
    pub skipped: u64,
}

impl DerivedState {
    /// Folds one stored document in. `seq` is its global store order.
    pub fn apply(&mut self, spec: &DerivedIndexSpec, doc: &Document, seq: u64) {
        let Some(key) = doc.get_path(&spec.key_field) else {
            self.skipped += 1;
            return;
        };
        let key = key.to_string();
        match spec.mode {
            DerivedMode::LatestByTimestamp => {
                let replace = match self.entries.get(&key) {
                    Some(DerivedEntry::Latest { doc: cur, seq: cur_seq }) => (doc.timestamp, seq) >= (cur.timestamp, *cur_seq),
                    _ => true,
                };
                if replace {
                    self.entries.insert(key, DerivedEntry::Latest { doc: doc.clone(), seq });
                }
            }
            DerivedMode::NumericSum => {
                let entry = self.entries.entry(key).or_insert_with(|| DerivedEntry::Sum { sums: BTreeMap::new(), docs: 0 });
                if let DerivedEntry::Sum { sums, docs } = entry {
                    *docs += 1;
                    for f in &spec.value_fields {
                        if let Some(v) = doc.get_path(f).and_then(|s| s.as_f64()) {
                            *sums.entry(f.clone()).or_insert(0.0) += v;
                        }
                    }
                }
            }
        }
    }

    pub fn latest(&self, key: &str) -> Option<&Document> {
        match self.entries.get(key)? {
            DerivedEntry::Latest { doc, .. } => Some(doc),
            DerivedEntry::Sum { .. } => None,
        }
    }

    pub fn sum(&self, key: &str, field: &str) -> Option<f64> {
        match self.entries.get(key)? {
            DerivedEntry::Sum { sums, .. } => sums.get(field).copied(),
            DerivedEntry::Latest { .. } => None,
        }
    }
}

/// Outcome of a full rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebuildReport {
    pub entries: u64,
    pub skipped: u64,
}

/// Whether a document timestamp lies in the inclusive range.
pub(crate) fn in_range(ts: Timestamp, range: (Timestamp, Timestamp)) -> bool {
    ts >= range.0 && ts <= range.1
}
