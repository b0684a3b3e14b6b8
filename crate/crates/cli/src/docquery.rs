//! Compact document filter syntax: whitespace-separated clauses
//! `field=value`, `field!=value`, `field>value`, `field<value` and
//! `field?` (field exists). Values that read as JSON numbers, booleans or
//! quoted strings keep that type; anything else is a bare string.

use minimon_core::{FieldMatcher, FieldOp, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterError {
    /// Byte offset into the filter text.
    pub pos: usize,
    pub message: String,
}

impl std::fmt::Display for FilterError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "parse error at position {}: {}", self.pos, self.message)
    }
}

fn err(pos: usize, message: impl Into<String>) -> FilterError {
    FilterError { pos, message: message.into() }
}

/// Splits on whitespace outside double quotes, keeping byte offsets.
fn clauses(text: &str) -> Result<Vec<(usize, &str)>, FilterError> {
    let mut out = Vec::new();
    let mut start = None;
    let mut quote: Option<usize> = None;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if quote.is_some() {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => quote = None,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => {
                quote = Some(i);
                start.get_or_insert(i);
            }
            c if c.is_whitespace() => {
                if let Some(s) = start.take() {
                    out.push((s, &text[s..i]));
                }
            }
            _ => {
                start.get_or_insert(i);
            }
        }
    }
    if let Some(q) = quote {
        return Err(err(q, "unterminated string"));
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    Ok(out)
}

fn parse_value(pos: usize, text: &str) -> Result<Scalar, FilterError> {
    if text.is_empty() {
        return Err(err(pos, "missing value"));
    }
    if text.starts_with('"') {
        return match serde_json::from_str::<String>(text) {
            Ok(s) => Ok(Scalar::Str(s)),
            Err(e) => Err(err(pos, format!("bad string: {e}"))),
        };
    }
    Ok(match text {
        "true" => Scalar::Bool(true),
        "false" => Scalar::Bool(false),
        _ => match (text.parse::<i64>(), text.parse::<f64>()) {
            (Ok(i), _) => Scalar::Int(i),
            (_, Ok(f)) if f.is_finite() && text.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c)) => Scalar::Float(f),
            _ => Scalar::Str(text.to_string()),
        },
    })
}

fn valid_field(name: &str) -> bool {
    !name.is_empty() && name.split('.').all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
}

pub fn parse_filter(text: &str) -> Result<Vec<FieldMatcher>, FilterError> {
    let mut out = Vec::new();
    for (pos, clause) in clauses(text)? {
        if let Some(field) = clause.strip_suffix('?') {
            if !valid_field(field) {
                return Err(err(pos, format!("invalid field name {field:?}")));
            }
            out.push(FieldMatcher::exists(field));
            continue;
        }
        let Some(op_at) = clause.find(['=', '!', '>', '<']) else {
            return Err(err(pos, format!("expected an operator (=, !=, >, <, ?) in {clause:?}")));
        };
        let (op, len) = match &clause[op_at..] {
            s if s.starts_with("!=") => (FieldOp::Neq, 2),
            s if s.starts_with('=') => (FieldOp::Eq, 1),
            s if s.starts_with('>') => (FieldOp::Gt, 1),
            s if s.starts_with('<') => (FieldOp::Lt, 1),
            _ => return Err(err(pos + op_at, "expected != after !")),
        };
        let field = &clause[..op_at];
        if !valid_field(field) {
            return Err(err(pos, format!("invalid field name {field:?}")));
        }
        let value = parse_value(pos + op_at + len, &clause[op_at + len..])?;
        out.push(FieldMatcher::new(field, op, value));
    }
    Ok(out)
}
