use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Document, Result, Scalar, TagSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Neq,
    #[serde(rename = "=~")]
    Re,
}

impl LabelOp {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelOp::Eq => "=",
            LabelOp::Neq => "!=",
            LabelOp::Re => "=~",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LabelMatcherRepr {
    name: String,
    op: LabelOp,
    value: String,
}

/// Matches one tag of a tag set. A missing tag behaves as the empty string,
/// so `site=""` selects series without a `site` tag. Regexes are anchored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LabelMatcherRepr", into = "LabelMatcherRepr")]
pub struct LabelMatcher {
    pub name: String,
    pub op: LabelOp,
    pub value: String,
    regex: Option<Regex>,
}

impl LabelMatcher {
    pub fn new(name: impl Into<String>, op: LabelOp, value: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let value = value.into();
        let regex = match op {
            LabelOp::Re => Some(Regex::new(&format!("^(?:{value})$")).map_err(|e| CoreError::InvalidRegex {
                pattern: value.clone(),
                reason: e.to_string(),
            })?),
            _ => None,
        };
        Ok(LabelMatcher { name, op, value, regex })
    }

    pub fn eq(name: impl Into<String>, value: impl Into<String>) -> Self {
        LabelMatcher { name: name.into(), op: LabelOp::Eq, value: value.into(), regex: None }
    }

    pub fn matches_value(&self, actual: Option<&str>) -> bool {
        let actual = actual.unwrap_or("");
        match self.op {
            LabelOp::Eq => actual == self.value,
            LabelOp::Neq => actual != self.value,
            LabelOp::Re => self.regex.as_ref().is_some_and(|re| re.is_match(actual)),
        }
    }

    pub fn matches(&self, tags: &TagSet) -> bool {
        self.matches_value(tags.get(&self.name))
    }
}

impl PartialEq for LabelMatcher {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.op == other.op && self.value == other.value
    }
}

impl fmt::Display for LabelMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{:?}", self.name, self.op.as_str(), self.value)
    }
}

impl TryFrom<LabelMatcherRepr> for LabelMatcher {
    type Error = CoreError;

    fn try_from(r: LabelMatcherRepr) -> Result<Self> {
        LabelMatcher::new(r.name, r.op, r.value)
    }
}

impl From<LabelMatcher> for LabelMatcherRepr {
    fn from(m: LabelMatcher) -> Self {
        LabelMatcherRepr { name: m.name, op: m.op, value: m.value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FieldOp {
    Eq,
    Neq,
    Gt,
    Lt,
    Exists,
}

/// Predicate over one document field (`field` or `object.field`).
///
/// `NEQ` also matches documents lacking the field. `GT`/`LT` compare
/// numbers with numbers and strings with strings; mixed kinds never match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMatcher {
    pub field: String,
    pub op: FieldOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Scalar>,
}

impl FieldMatcher {
    pub fn new(field: impl Into<String>, op: FieldOp, value: impl Into<Scalar>) -> Self {
        FieldMatcher { field: field.into(), op, value: Some(value.into()) }
    }

    pub fn exists(field: impl Into<String>) -> Self {
        FieldMatcher { field: field.into(), op: FieldOp::Exists, value: None }
    }

    pub fn matches(&self, doc: &Document) -> bool {
        let actual = doc.get_path(&self.field);
        match (self.op, actual, &self.value) {
            (FieldOp::Exists, a, _) => a.is_some(),
            (FieldOp::Neq, None, _) => true,
            (_, None, _) | (_, _, None) => false,
            (FieldOp::Eq, Some(a), Some(v)) => a.loose_eq(v),
            (FieldOp::Neq, Some(a), Some(v)) => !a.loose_eq(v),
            (FieldOp::Gt, Some(a), Some(v)) => a.loose_cmp(v) == Some(std::cmp::Ordering::Greater),
            (FieldOp::Lt, Some(a), Some(v)) => a.loose_cmp(v) == Some(std::cmp::Ordering::Less),
        }
    }
}
