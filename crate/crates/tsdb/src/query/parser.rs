//! Hand-written parser for
//!
//! ```text
//! expr     := [agg] [func "("] selector ["[" window "]"] [")"]
//! selector := name ["{" matcher ("," matcher)* "}"]
//! matcher  := tag ("=" | "!=" | "=~") '"' value '"'
//! agg      := ("sum" | "avg" | "max" | "min") "by" "(" tag ("," tag)* ")"
//! ```
//!
//! A range function requires a window and a window requires a range
//! function. Positions in errors are byte offsets into the input.

use std::fmt;

use minimon_core::{parse_duration, LabelMatcher, LabelOp};
use thiserror::Error;

use super::ast::{AggOp, Aggregation, QueryAst, RangeFunc, RangeFunction, Selector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at position {}: {}", self.pos, self.message)
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    Parser { src: text, pos: 0 }.expr()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn err<T>(&self, pos: usize, message: impl Into<String>) -> PResult<T> {
        Err(ParseError { pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn describe(&mut self) -> String {
        match self.peek() {
            Some(c) => format!("{c:?}"),
            None => "end of input".to_string(),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char, context: &str) -> PResult<()> {
        if self.eat(c) {
            return Ok(());
        }
        let found = self.describe();
        self.err(self.pos, format!("expected {c:?} {context}, found {found}"))
    }

    /// `[A-Za-z_][A-Za-z0-9_]*` after whitespace, or `None` without consuming.
    fn ident(&mut self) -> Option<(usize, &'a str)> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let first = rest.chars().next()?;
        if !(first.is_ascii_alphabetic() || first == '_') {
            return None;
        }
        let len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        let start = self.pos;
        self.pos += len;
        Some((start, &rest[..len]))
    }

    fn expect_ident(&mut self, what: &str) -> PResult<(usize, &'a str)> {
        match self.ident() {
            Some(id) => Ok(id),
            None => {
                let found = self.describe();
                self.err(self.pos, format!("expected {what}, found {found}"))
            }
        }
    }

    /// Looks at the identifier after the current one without consuming.
    fn lookahead_ident(&self) -> Option<&'a str> {
        let mut probe = Parser { src: self.src, pos: self.pos };
        probe.ident().map(|(_, s)| s)
    }

    fn expr(&mut self) -> PResult<QueryAst> {
        let (mut start, mut word) = self.expect_ident("metric name, aggregation or function")?;

        let mut aggregation = None;
        if let Some(op) = AggOp::from_name(word) {
            if self.lookahead_ident() == Some("by") {
                self.ident();
                self.expect('(', "after \"by\"")?;
                let mut by = vec![self.expect_ident("tag name")?.1.to_string()];
                while self.eat(',') {
                    by.push(self.expect_ident("tag name")?.1.to_string());
                }
                self.expect(')', "to close the grouping list")?;
                aggregation = Some(Aggregation { op, by });
                (start, word) = self.expect_ident("metric name or function")?;
            }
        }

        let mut func = None;
        if let Some(f) = RangeFunc::from_name(word) {
            if self.peek() == Some('(') {
                self.pos += 1;
                func = Some((start, f));
                (start, word) = self.expect_ident("metric name")?;
            }
        }
        let _ = start;

        let selector = self.selector(word)?;

        let mut window = None;
        self.skip_ws();
        let bracket = self.pos;
        if self.eat('[') {
            self.skip_ws();
            let wstart = self.pos;
            let rest = &self.src[self.pos..];
            let len = rest.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(rest.len());
            let text = &rest[..len];
            if text.is_empty() {
                return self.err(wstart, "expected a window duration such as 5m");
            }
            let d = match parse_duration(text) {
                Ok(d) => d,
                Err(_) => return self.err(wstart, format!("invalid window duration {text:?}")),
            };
            if d.is_zero() {
                return self.err(wstart, "window must be positive");
            }
            self.pos += len;
            self.expect(']', "to close the window")?;
            window = Some((bracket, d));
        }

        let range = match (func, window) {
            (Some((_, f)), Some((_, w))) => {
                self.expect(')', "to close the function call")?;
                Some(RangeFunction { func: f, window: w })
            }
            (Some((_, f)), None) => {
                let at = self.pos;
                return self.err(at, format!("{} requires a range window like [5m]", f.name()));
            }
            (None, Some((at, _))) => return self.err(at, "a range window is only allowed inside a range function"),
            (None, None) => None,
        };

        if let Some(c) = self.peek() {
            return self.err(self.pos, format!("unexpected {c:?} after end of query"));
        }
        Ok(QueryAst { selector, range, aggregation })
    }

    fn selector(&mut self, metric: &str) -> PResult<Selector> {
        let mut matchers = Vec::new();
        if self.eat('{') {
            loop {
                let (_, tag) = self.expect_ident("tag name")?;
                self.skip_ws();
                let rest = &self.src[self.pos..];
                let op = if rest.starts_with("=~") {
                    self.pos += 2;
                    LabelOp::Re
                } else if rest.starts_with("!=") {
                    self.pos += 2;
                    LabelOp::Neq
                } else if rest.starts_with('=') {
                    self.pos += 1;
                    LabelOp::Eq
                } else {
                    let found = self.describe();
                    return self.err(self.pos, format!("expected matcher operator (=, != or =~), found {found}"));
                };
                self.skip_ws();
                let vpos = self.pos;
                let value = self.string()?;
                let m = match LabelMatcher::new(tag, op, value) {
                    Ok(m) => m,
                    Err(e) => return self.err(vpos, e.to_string()),
                };
                matchers.push(m);
                if self.eat(',') {
                    continue;
                }
                self.expect('}', "or ',' after matcher")?;
                break;
            }
        }
        Ok(Selector { metric: metric.to_string(), matchers })
    }

    fn string(&mut self) -> PResult<String> {
        if !self.src[self.pos..].starts_with('"') {
            let found = self.describe();
            return self.err(self.pos, format!("expected '\"' to start matcher value, found {found}"));
        }
        let open = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.src[self.pos..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((j, other)) => return self.err(self.pos + j, format!("unknown escape \\{other}")),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.err(open, "unterminated string")
    }
}
