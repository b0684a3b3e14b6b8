//! Line-oriented exposition text:
//!
//! ```text
//! name{tag="value",...} <float> [<int ms timestamp>]
//! ```
//!
//! One sample per line, fields separated by single spaces, `\n` line
//! terminator. Lines starting with `#` and empty lines are skipped. Tag
//! values escape `"`, `\` and newline with a backslash. Values must be
//! finite.

use std::fmt::Write as _;

use minimon_core::{validate_name, SeriesKey, TagSet, Timestamp};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ExpositionError {
    /// 1-based.
    pub line: usize,
    /// 1-based byte column.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: SeriesKey,
    pub value: f64,
    pub ts: Option<Timestamp>,
}

/// Parses a whole exposition body. Any malformed line fails the body.
pub fn parse(body: &str) -> Result<Vec<Sample>, ExpositionError> {
    let mut out = Vec::new();
    for (i, line) in body.split('\n').enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_line(line).map_err(|(column, message)| ExpositionError { line: i + 1, column: column + 1, message })?);
    }
    Ok(out)
}

/// The line for one sample, without the terminator.
pub fn render(sample: &Sample) -> String {
    let mut out = sample.key.canonical();
    let _ = write!(out, " {}", sample.value);
    if let Some(ts) = sample.ts {
        let _ = write!(out, " {}", ts.as_millis());
    }
    out
}

type LineResult<T> = Result<T, (usize, String)>;

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn fail<T>(&self, message: impl Into<String>) -> LineResult<T> {
        Err((self.pos, message.into()))
    }

    fn expect(&mut self, b: u8) -> LineResult<()> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {:?}", b as char))
        }
    }

    fn ident(&mut self) -> LineResult<String> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        if !validate_name(name) {
            self.pos = start;
            return self.fail(format!("invalid identifier {name:?}"));
        }
        Ok(name.to_string())
    }

    fn quoted(&mut self) -> LineResult<String> {
        self.expect(b'"')?;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return self.fail("unterminated tag value"),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(b'"') => out.push(b'"'),
                        Some(b'\\') => out.push(b'\\'),
                        Some(b'n') => out.push(b'\n'),
                        _ => return self.fail("invalid escape"),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(out).map_err(|_| (self.pos, "tag value is not UTF-8".to_string()))
    }

    fn token(&mut self) -> &str {
        let start = self.pos;
        while self.peek().is_some_and(|c| c != b' ') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("")
    }
}

fn parse_line(line: &str) -> LineResult<Sample> {
    let mut c = Cursor { s: line.as_bytes(), pos: 0 };
    let name = c.ident()?;
    let mut tags = TagSet::new();
    if c.peek() == Some(b'{') {
        c.pos += 1;
        if c.peek() != Some(b'}') {
            loop {
                let at = c.pos;
                let tag = c.ident()?;
                c.expect(b'=')?;
                let value = c.quoted()?;
                if tags.insert(tag.clone(), value).expect("validated identifier").is_some() {
                    return Err((at, format!("duplicate tag {tag:?}")));
                }
                match c.peek() {
                    Some(b',') => c.pos += 1,
                    _ => break,
                }
            }
        }
        c.expect(b'}')?;
    }
    c.expect(b' ')?;
    let at = c.pos;
    let text = c.token();
    let value: f64 = parse_float(text).ok_or_else(|| (at, format!("invalid sample value {text:?}")))?;
    if !value.is_finite() {
        return Err((at, "sample value must be finite".into()));
    }
    let ts = if c.peek() == Some(b' ') {
        c.pos += 1;
        let at = c.pos;
        let text = c.token();
        let ms = (!text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()))
            .then(|| text.parse::<u64>().ok())
            .flatten()
            .ok_or_else(|| (at, format!("invalid timestamp {text:?}")))?;
        Some(Timestamp::from_millis(ms))
    } else {
        None
    };
    if c.peek().is_some() {
        return c.fail("unexpected trailing input");
    }
    Ok(Sample { key: SeriesKey::new(name, tags).expect("validated identifier"), value, ts })
}

/// Decimal or exponent notation only; rejects the named specials that
/// `str::parse` would accept.
fn parse_float(text: &str) -> Option<f64> {
    let ok = !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    ok.then(|| text.parse().ok()).flatten()
}
