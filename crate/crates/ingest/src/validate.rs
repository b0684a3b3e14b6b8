use std::time::Duration;

use minimon_core::{Document, FieldValue, Timestamp, RESERVED_FIELDS};
use serde::{Deserialize, Serialize};

use crate::schema::SchemaDef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    ReservedField,
    TypeMismatch,
    MissingRequired,
    UnknownProducer,
    TimestampSkew,
    QuotaExceeded,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub doc_index: usize,
    pub reason: Reason,
    pub detail: String,
}

impl ValidationError {
    pub fn new(doc_index: usize, reason: Reason, detail: impl Into<String>) -> Self {
        ValidationError { doc_index, reason, detail: detail.into() }
    }
}

pub const DEFAULT_SKEW: Duration = Duration::from_millis(7 * minimon_core::DAY_MS);

/// Checks a document against its producer schema. The first failing check
/// wins, in the order reserved names, required fields, types, timestamp.
/// Fields the schema does not declare are accepted as is.
pub fn validate_document(doc: &Document, schema: &SchemaDef, now: Timestamp, skew: Duration) -> Result<(), (Reason, String)> {
    if let Some(name) = doc.payload.keys().find(|k| RESERVED_FIELDS.contains(&k.as_str())) {
        return Err((Reason::ReservedField, format!("payload field {name:?} is reserved")));
    }
    if let Some(f) = schema.fields.iter().find(|f| f.required && !doc.payload.contains_key(&f.name)) {
        return Err((Reason::MissingRequired, format!("required field {:?} is missing", f.name)));
    }
    for f in &schema.fields {
        let Some(value) = doc.payload.get(&f.name) else { continue };
        let ok = match value {
            FieldValue::Scalar(s) => f.field_type.admits(s),
            FieldValue::Object(_) => false,
        };
        if !ok {
            let found = match value {
                FieldValue::Scalar(s) => s.type_name(),
                FieldValue::Object(_) => "object",
            };
            return Err((Reason::TypeMismatch, format!("field {:?} declared {:?}, got {found}", f.name, f.field_type)));
        }
    }
    let off = doc.timestamp.abs_diff(now);
    if off > skew {
        return Err((Reason::TimestampSkew, format!("timestamp {} is {}ms from now", doc.timestamp, off.as_millis())));
    }
    Ok(())
}
