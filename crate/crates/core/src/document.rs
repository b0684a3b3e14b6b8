use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Timestamp;

/// Top-level payload names the document store reserves for itself.
pub const RESERVED_FIELDS: [&str; 3] = ["version", "timestamp", "uuid"];

/// A leaf payload value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Scalar::Bool(_) => "bool",
            Scalar::Int(_) => "int",
            Scalar::Float(_) => "float",
            Scalar::Str(_) => "string",
        }
    }

    /// Equality with numeric widening: `Int(2)` equals `Float(2.0)`.
    pub fn loose_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (a, b) if a.as_f64().is_some() && b.as_f64().is_some() => a.as_f64() == b.as_f64(),
            (Scalar::Str(a), Scalar::Str(b)) => a == b,
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            _ => false,
        }
    }

    /// Ordering between comparable values: numbers with numbers, strings
    /// with strings. Anything else is incomparable.
    pub fn loose_cmp(&self, other: &Scalar) -> Option<Ordering> {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => Some(a.cmp(b)),
            (Scalar::Str(a), Scalar::Str(b)) => Some(a.cmp(b)),
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Float(x)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

/// A payload field: a scalar, or one level of nested scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Scalar(Scalar),
    Object(BTreeMap<String, Scalar>),
}

impl<T: Into<Scalar>> From<T> for FieldValue {
    fn from(v: T) -> Self {
        FieldValue::Scalar(v.into())
    }
}

impl FieldValue {
    pub fn as_scalar(&self) -> Option<&Scalar> {
        match self {
            FieldValue::Scalar(s) => Some(s),
            FieldValue::Object(_) => None,
        }
    }
}

/// The unit of ingestion: a timestamped, producer-tagged field map.
///
/// Struct fields are declared in alphabetical order and the payload is a
/// `BTreeMap`, so the serde JSON encoding is already canonical (sorted
/// keys, no whitespace). [`Document::canonical_bytes`] relies on that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub payload: BTreeMap<String, FieldValue>,
    pub producer: String,
    pub timestamp: Timestamp,
    #[serde(rename = "type")]
    pub doc_type: String,
}

impl Document {
    pub fn new(producer: impl Into<String>, doc_type: impl Into<String>, timestamp: Timestamp) -> Self {
        Document { payload: BTreeMap::new(), producer: producer.into(), timestamp, doc_type: doc_type.into() }
    }

    /// Builder-style payload insertion.
    pub fn with(mut self, field: impl Into<String>, value: impl Into<FieldValue>) -> Self {
        self.payload.insert(field.into(), value.into());
        self
    }

    /// Canonical encoding: sorted field names, no whitespace.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("document serialization is infallible")
    }

    pub fn from_canonical(bytes: &[u8]) -> serde_json::Result<Document> {
        serde_json::from_slice(bytes)
    }

    /// Looks up a scalar by `field` or `object.field`.
    pub fn get_path(&self, path: &str) -> Option<&Scalar> {
        match path.split_once('.') {
            None => self.payload.get(path)?.as_scalar(),
            Some((outer, inner)) => match self.payload.get(outer)? {
                FieldValue::Object(map) => map.get(inner),
                FieldValue::Scalar(_) => None,
            },
        }
    }
}
