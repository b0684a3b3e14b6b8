//! Textual forms shared by the configuration file, the outage feed and the
//! HTTP API: label matchers (`site="T2_XX"`, `host=~"node-.*"`),
//! durations (`5m`) and timestamps (RFC 3339 or epoch milliseconds).

use std::time::Duration;

use minimon_core::{format_duration, parse_duration, LabelMatcher, LabelOp, Timestamp};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

/// Parses `name op "value"` where op is `=`, `!=` or `=~` and the value is
/// a JSON string literal.
pub fn parse_matcher(text: &str) -> Result<LabelMatcher, String> {
    let text = text.trim();
    let name_len = text.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(text.len());
    let (name, rest) = text.split_at(name_len);
    if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
        return Err(format!("matcher {text:?}: expected a tag name"));
    }
    let rest = rest.trim_start();
    let (op, value) = if let Some(v) = rest.strip_prefix("=~") {
        (LabelOp::Re, v)
    } else if let Some(v) = rest.strip_prefix("!=") {
        (LabelOp::Neq, v)
    } else if let Some(v) = rest.strip_prefix('=') {
        (LabelOp::Eq, v)
    } else {
        return Err(format!("matcher {text:?}: expected =, != or =~"));
    };
    let value: String = serde_json::from_str(value.trim()).map_err(|_| format!("matcher {text:?}: value must be a double-quoted string"))?;
    LabelMatcher::new(name, op, value).map_err(|e| format!("matcher {text:?}: {e}"))
}

pub fn render_matcher(m: &LabelMatcher) -> String {
    let value = serde_json::to_string(&m.value).expect("strings serialize");
    format!("{}{}{}", m.name, m.op.as_str(), value)
}

pub mod matchers {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[LabelMatcher], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ms.iter().map(render_matcher))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<LabelMatcher>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts.iter().map(|t| parse_matcher(t).map_err(D::Error::custom)).collect()
    }
}

pub mod duration {
    use super::*;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_duration(*d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let text = String::deserialize(d)?;
        parse_duration(&text).map_err(D::Error::custom)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TimestampRepr {
    Millis(u64),
    Text(String),
}

pub mod timestamp {
    use super::*;

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        match TimestampRepr::deserialize(d)? {
            TimestampRepr::Millis(ms) => Ok(Timestamp::from_millis(ms)),
            TimestampRepr::Text(s) => Timestamp::parse_rfc3339(&s).map_err(D::Error::custom),
        }
    }
}

/// Replaces `$value` and `$labels.<tag>` in an annotation template. A
/// missing tag renders as the empty string; any other `$` is kept.
pub fn render_template(template: &str, value: f64, labels: &minimon_core::TagSet) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        let tail = &rest[at..];
        if let Some(after) = tail.strip_prefix("$labels.") {
            let n = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(after.len());
            if n > 0 {
                out.push_str(labels.get(&after[..n]).unwrap_or(""));
                rest = &after[n..];
                continue;
            }
        } else if let Some(after) = tail.strip_prefix("$value") {
            out.push_str(&value.to_string());
            rest = after;
            continue;
        }
        out.push('$');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}
