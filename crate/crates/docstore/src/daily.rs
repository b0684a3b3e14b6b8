use std::collections::HashMap;
use std::sync::Arc;

use chrono::NaiveDate;
use minimon_core::{Document, FieldMatcher, FieldOp, FieldValue, Scalar, Timestamp};
use serde::{Deserialize, Serialize};

/// `<doc_type>-YYYY.MM.DD` for the UTC day of `ts`.
pub fn index_name(doc_type: &str, ts: Timestamp) -> String {
    format!("{doc_type}-{}", ts.date().format("%Y.%m.%d"))
}

/// Splits an index name back into its doc type and day.
pub fn parse_index_name(name: &str) -> Option<(&str, NaiveDate)> {
    let (doc_type, day) = name.rsplit_once('-')?;
    let date = NaiveDate::parse_from_str(day, "%Y.%m.%d").ok()?;
    Some((doc_type, date))
}

/// Key under which a scalar is posted in the field index. Numbers share
/// one key space so that `Int(2)` and `Float(2.0)` collide, matching
/// loose equality; postings are only a prefilter and every hit is
/// re-checked against the matcher.
pub(crate) fn value_key(v: &Scalar) -> String {
    match v {
        Scalar::Bool(b) => format!("b:{b}"),
        // adding 0.0 folds -0.0 into 0.0
        Scalar::Int(_) | Scalar::Float(_) => format!("n:{}", v.as_f64().unwrap() + 0.0),
        Scalar::Str(s) => format!("s:{s}"),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StoredDoc {
    pub doc: Arc<Document>,
    /// Global store order, used to break timestamp ties.
    pub seq: u64,
    pub bytes: u64,
}

/// field path → value key → positions in `docs`
pub(crate) type FieldIndex = HashMap<String, HashMap<String, Vec<u32>>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexInfo {
    pub name: String,
    pub doc_type: String,
    pub docs: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub(crate) struct DailyIndex {
    pub name: String,
    pub doc_type: String,
    pub day: NaiveDate,
    pub docs: Vec<StoredDoc>,
    pub fields: FieldIndex,
    pub bytes: u64,
}

impl DailyIndex {
    pub fn new(name: String, doc_type: String, day: NaiveDate) -> Self {
        DailyIndex { name, doc_type, day, docs: Vec::new(), fields: HashMap::new(), bytes: 0 }
    }

    pub fn push(&mut self, stored: StoredDoc) {
        let pos = self.docs.len() as u32;
        for (path, v) in scalar_paths(&stored.doc) {
            self.fields.entry(path).or_default().entry(value_key(v)).or_default().push(pos);
        }
        self.bytes += stored.bytes;
        self.docs.push(stored);
    }

    pub fn rebuild_fields(&mut self) {
        let docs = std::mem::take(&mut self.docs);
        self.fields.clear();
        self.bytes = 0;
        for d in docs {
            self.push(d);
        }
    }

    /// Positions worth checking for `matchers`, narrowed by the smallest
    /// `EQ`/`EXISTS` posting among them. `None` means scan everything.
    pub fn candidates(&self, matchers: &[FieldMatcher]) -> Option<Vec<u32>> {
        let mut best: Option<Vec<u32>> = None;
        for m in matchers {
            let narrowed = match (m.op, &m.value) {
                (FieldOp::Eq, Some(v)) => Some(self.fields.get(&m.field).and_then(|vals| vals.get(&value_key(v))).cloned().unwrap_or_default()),
                (FieldOp::Exists, _) => {
                    let mut all: Vec<u32> = self.fields.get(&m.field).map(|vals| vals.values().flatten().copied().collect()).unwrap_or_default();
                    all.sort_unstable();
                    Some(all)
                }
                _ => None,
            };
            if let Some(n) = narrowed {
                if best.as_ref().is_none_or(|b| n.len() < b.len()) {
                    best = Some(n);
                }
            }
        }
        best
    }

    pub fn info(&self) -> IndexInfo {
        IndexInfo { name: self.name.clone(), doc_type: self.doc_type.clone(), docs: self.docs.len() as u64, bytes: self.bytes }
    }
}

/// Every scalar in a document with its `field` or `object.field` path.
pub(crate) fn scalar_paths(doc: &Document) -> Vec<(String, &Scalar)> {
    let mut out = Vec::new();
    for (k, v) in &doc.payload {
        match v {
            FieldValue::Scalar(s) => out.push((k.clone(), s)),
            FieldValue::Object(map) => {
                for (ik, s) in map {
                    out.push((format!("{k}.{ik}"), s));
                }
            }
        }
    }
    out
}
