use std::collections::{BTreeMap, HashSet};

use minimon_core::{validate_name, Document, FieldValue, MetricPoint, Scalar, SeriesKey, TagSet, RESERVED_FIELDS};
use serde::{Deserialize, Serialize};

use crate::validate::Reason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Int,
    Float,
    String,
    Bool,
}

impl FieldType {
    /// Whether `value` may be stored under this declared type. An int is
    /// accepted where a float is declared, never the reverse.
    pub fn admits(self, value: &Scalar) -> bool {
        matches!(
            (self, value),
            (FieldType::Int, Scalar::Int(_))
                | (FieldType::Float, Scalar::Float(_) | Scalar::Int(_))
                | (FieldType::String, Scalar::Str(_))
                | (FieldType::Bool, Scalar::Bool(_))
        )
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, FieldType::Int | FieldType::Float)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub producer: String,
    pub doc_type: String,
    pub fields: Vec<FieldDef>,
}

impl SchemaDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Which payload fields become series tags and which become sample values
/// when a document is routed to the time-series store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsdbMapping {
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub values: Vec<String>,
}

impl TsdbMapping {
    /// One point per mapped value field present in `doc`, named
    /// `<doc_type>_<field>`. Absent tag fields are left off the series.
    pub fn points(&self, doc: &Document) -> Vec<MetricPoint> {
        let mut tags = TagSet::new();
        for t in &self.tags {
            if let Some(FieldValue::Scalar(Scalar::Str(v))) = doc.payload.get(t) {
                tags.insert(t.clone(), v.clone()).expect("tag names are validated at registration");
            }
        }
        self.values
            .iter()
            .filter_map(|f| {
                let v = doc.payload.get(f)?.as_scalar()?.as_f64()?;
                let key = SeriesKey::new(format!("{}_{f}", doc.doc_type), tags.clone()).ok()?;
                v.is_finite().then(|| MetricPoint::new(key, v, doc.timestamp))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    #[serde(default = "yes")]
    pub to_docstore: bool,
    #[serde(default)]
    pub to_tsdb: bool,
    #[serde(default = "yes")]
    pub to_archive: bool,
    #[serde(default)]
    pub tsdb: TsdbMapping,
}

fn yes() -> bool {
    true
}

impl Default for Route {
    fn default() -> Self {
        Route { to_docstore: true, to_tsdb: false, to_archive: true, tsdb: TsdbMapping::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerRegistration {
    pub producer: String,
    pub doc_type: String,
    pub schema: SchemaDef,
    pub daily_quota_bytes: u64,
    #[serde(default)]
    pub route: Route,
}

/// Why a registration was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaProblem {
    pub reason: Reason,
    pub detail: String,
}

impl SchemaProblem {
    fn malformed(detail: impl Into<String>) -> Self {
        SchemaProblem { reason: Reason::Malformed, detail: detail.into() }
    }
}

impl ProducerRegistration {
    pub fn validate(&self) -> Result<(), SchemaProblem> {
        for name in [&self.producer, &self.doc_type] {
            if !validate_name(name) {
                return Err(SchemaProblem::malformed(format!("invalid identifier {name:?}")));
            }
        }
        if self.schema.producer != self.producer || self.schema.doc_type != self.doc_type {
            return Err(SchemaProblem::malformed("schema producer/doc_type differ from the registration"));
        }
        if self.daily_quota_bytes == 0 {
            return Err(SchemaProblem::malformed("daily_quota_bytes must be positive"));
        }
        if self.schema.fields.is_empty() {
            return Err(SchemaProblem::malformed("schema declares no fields"));
        }
        let mut seen = HashSet::new();
        for f in &self.schema.fields {
            if RESERVED_FIELDS.contains(&f.name.as_str()) {
                return Err(SchemaProblem { reason: Reason::ReservedField, detail: format!("field {:?} is reserved", f.name) });
            }
            if !validate_name(&f.name) {
                return Err(SchemaProblem::malformed(format!("invalid field name {:?}", f.name)));
            }
            if !seen.insert(&f.name) {
                return Err(SchemaProblem::malformed(format!("field {:?} declared twice", f.name)));
            }
        }
        let mapping = &self.route.tsdb;
        for t in &mapping.tags {
            match self.schema.field(t) {
                Some(f) if f.field_type == FieldType::String => {}
                Some(_) => return Err(SchemaProblem { reason: Reason::TypeMismatch, detail: format!("tag field {t:?} must be a string") }),
                None => return Err(SchemaProblem::malformed(format!("tag field {t:?} is not in the schema"))),
            }
        }
        for v in &mapping.values {
            match self.schema.field(v) {
                Some(f) if f.field_type.is_numeric() => {}
                Some(_) => return Err(SchemaProblem { reason: Reason::TypeMismatch, detail: format!("value field {v:?} must be numeric") }),
                None => return Err(SchemaProblem::malformed(format!("value field {v:?} is not in the schema"))),
            }
        }
        if self.route.to_tsdb && mapping.values.is_empty() {
            return Err(SchemaProblem::malformed("tsdb routing needs at least one value field"));
        }
        Ok(())
    }

    pub fn key(&self) -> (String, String) {
        (self.producer.clone(), self.doc_type.clone())
    }
}

/// Convenience for building registrations in code.
pub fn registration(producer: &str, doc_type: &str, fields: &[(&str, FieldType, bool)], daily_quota_bytes: u64) -> ProducerRegistration {
    ProducerRegistration {
        producer: producer.into(),
        doc_type: doc_type.into(),
        schema: SchemaDef {
            producer: producer.into(),
            doc_type: doc_type.into(),
            fields: fields.iter().map(|(n, t, r)| FieldDef { name: (*n).into(), field_type: *t, required: *r }).collect(),
        },
        daily_quota_bytes,
        route: Route::default(),
    }
}

pub(crate) type Payload = BTreeMap<String, FieldValue>;

#[cfg(test)]
mod tests {
    use super::*;
    use minimon_core::Timestamp;

    fn reg() -> ProducerRegistration {
        registration("spider", "condor_job", &[("status", FieldType::String, true), ("site", FieldType::String, false), ("cpu", FieldType::Float, false)], 1 << 20)
    }

    #[test]
    fn reserved_field_rejected() {
        let mut r = reg();
        r.schema.fields.push(FieldDef { name: "uuid".into(), field_type: FieldType::String, required: false });
        assert_eq!(r.validate().unwrap_err().reason, Reason::ReservedField);
    }

    #[test]
    fn mapping_checked_against_schema() {
        let mut r = reg();
        r.route.to_tsdb = true;
        r.route.tsdb = TsdbMapping { tags: vec!["site".into()], values: vec!["cpu".into()] };
        r.validate().unwrap();
        r.route.tsdb.tags.push("cpu".into());
        assert_eq!(r.validate().unwrap_err().reason, Reason::TypeMismatch);
        r.route.tsdb.tags = vec!["nope".into()];
        assert_eq!(r.validate().unwrap_err().reason, Reason::Malformed);
        let mut r = reg();
        r.daily_quota_bytes = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn int_widens_to_float_only() {
        assert!(FieldType::Float.admits(&Scalar::Int(3)));
        assert!(!FieldType::Int.admits(&Scalar::Float(3.0)));
        assert!(!FieldType::String.admits(&Scalar::Int(3)));
    }

    #[test]
    fn mapping_points() {
        let m = TsdbMapping { tags: vec!["site".into(), "status".into()], values: vec!["cpu".into(), "wall".into()] };
        let doc = Document::new("spider", "condor_job", Timestamp::from_millis(5)).with("site", "T1").with("cpu", 2i64).with("wall", "x");
        let pts = m.points(&doc);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].key.canonical(), r#"condor_job_cpu{site="T1"}"#);
        assert_eq!((pts[0].value, pts[0].ts), (2.0, Timestamp::from_millis(5)));
    }
}
