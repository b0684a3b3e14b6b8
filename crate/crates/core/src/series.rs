use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::name::check_name;
use crate::{Result, Timestamp};

/// Tag name → tag value map. Names are validated identifiers; the map is
/// ordered by name so iteration order never leaks into identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct TagSet(BTreeMap<String, String>);

impl TagSet {
    pub fn new() -> Self {
        TagSet(BTreeMap::new())
    }

    /// Builds a tag set from pairs. A repeated name is an error, not an
    /// overwrite.
    pub fn from_pairs<K, V, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut tags = TagSet::new();
        for (k, v) in pairs {
            let k = k.into();
            check_name(&k)?;
            if tags.0.contains_key(&k) {
                return Err(crate::CoreError::InvalidName(format!("duplicate tag {k}")));
            }
            tags.0.insert(k, v.into());
        }
        Ok(tags)
    }

    /// Inserts or replaces a tag, returning the previous value.
    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) -> Result<Option<String>> {
        let name = name.into();
        check_name(&name)?;
        Ok(self.0.insert(name, value.into()))
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        self.0.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copies every tag from `other`, `other` winning on collisions.
    pub fn merge_from(&mut self, other: &TagSet) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    /// Keeps only the named tags.
    pub fn project(&self, names: &[String]) -> TagSet {
        TagSet(self.0.iter().filter(|(k, _)| names.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    /// `{k1="v1",k2="v2"}`, or the empty string for an empty set.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.0.is_empty() {
            return out;
        }
        out.push('{');
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(k);
            out.push_str("=\"");
            escape_value(v, &mut out);
            out.push('"');
        }
        out.push('}');
        out
    }
}

impl TryFrom<BTreeMap<String, String>> for TagSet {
    type Error = crate::CoreError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            check_name(k)?;
        }
        Ok(TagSet(map))
    }
}

impl From<TagSet> for BTreeMap<String, String> {
    fn from(tags: TagSet) -> Self {
        tags.0
    }
}

fn escape_value(v: &str, out: &mut String) {
    for c in v.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

/// Identity of a series: metric name plus tag set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub name: String,
    pub tags: TagSet,
}

impl SeriesKey {
    pub fn new(name: impl Into<String>, tags: TagSet) -> Result<Self> {
        let name = name.into();
        check_name(&name)?;
        Ok(SeriesKey { name, tags })
    }

    pub fn canonical(&self) -> String {
        let mut out = String::with_capacity(self.name.len() + 16 * self.tags.len());
        out.push_str(&self.name);
        out.push_str(&self.tags.render());
        out
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        f.write_str(&self.tags.render())
    }
}

/// Deterministic `name{k="v",...}` rendering with tags sorted bytewise by
/// name. Values escape `"`, `\` and newline.
pub fn canonical_series_key(name: &str, tags: &TagSet) -> Result<String> {
    check_name(name)?;
    for (k, _) in tags.iter() {
        check_name(k)?;
    }
    let mut out = String::new();
    let _ = write!(out, "{name}{}", tags.render());
    Ok(out)
}

/// One float sample of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub key: SeriesKey,
    pub value: f64,
    pub ts: Timestamp,
}

impl MetricPoint {
    pub fn new(key: SeriesKey, value: f64, ts: Timestamp) -> Self {
        MetricPoint { key, value, ts }
    }
}
