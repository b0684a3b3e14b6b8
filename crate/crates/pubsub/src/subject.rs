//! Dot-separated subjects and wildcard patterns. In a pattern `*` matches
//! exactly one token and `>` matches one or more trailing tokens.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} {text:?}: {reason}")]
pub struct SubjectError {
    pub kind: &'static str,
    pub text: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Literal(String),
    One,
    Tail,
}

/// A subject or subscription pattern, split into tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    tokens: Vec<Token>,
}

fn check_token(t: &str) -> Result<(), &'static str> {
    if t.is_empty() {
        return Err("empty token");
    }
    if t.chars().any(char::is_whitespace) {
        return Err("whitespace in token");
    }
    if t.contains(['*', '>']) {
        return Err("wildcard inside a token");
    }
    Ok(())
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Pattern, SubjectError> {
        let err = |reason| SubjectError { kind: "pattern", text: text.to_string(), reason };
        let parts: Vec<&str> = text.split('.').collect();
        let mut tokens = Vec::with_capacity(parts.len());
        for (i, p) in parts.iter().enumerate() {
            tokens.push(match *p {
                "*" => Token::One,
                ">" if i + 1 == parts.len() => Token::Tail,
                ">" => return Err(err("'>' must be the last token")),
                lit => {
                    check_token(lit).map_err(err)?;
                    Token::Literal(lit.to_string())
                }
            });
        }
        Ok(Pattern { tokens })
    }

    /// A concrete subject: a pattern without wildcards.
    pub fn subject(text: &str) -> Result<Pattern, SubjectError> {
        let p = Pattern::parse(text).map_err(|e| SubjectError { kind: "subject", ..e })?;
        if p.has_wildcards() {
            return Err(SubjectError { kind: "subject", text: text.to_string(), reason: "wildcards are only valid in patterns" });
        }
        Ok(p)
    }

    pub fn has_wildcards(&self) -> bool {
        self.tokens.iter().any(|t| !matches!(t, Token::Literal(_)))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Whether this pattern matches the concrete `subject`.
    pub fn matches(&self, subject: &Pattern) -> bool {
        let subj = &subject.tokens;
        for (i, t) in self.tokens.iter().enumerate() {
            match t {
                Token::Tail => return subj.len() > i,
                Token::One => {
                    if i >= subj.len() {
                        return false;
                    }
                }
                Token::Literal(l) => match subj.get(i) {
                    Some(Token::Literal(s)) if s == l => {}
                    _ => return false,
                },
            }
        }
        subj.len() == self.tokens.len()
    }

    /// Whether every subject matched by `other` is also matched by `self`.
    pub fn covers(&self, other: &Pattern) -> bool {
        let theirs = &other.tokens;
        for (i, t) in self.tokens.iter().enumerate() {
            match (t, theirs.get(i)) {
                (Token::Tail, Some(_)) => return true,
                (_, None) => return false,
                (Token::One, Some(Token::Tail)) => return false,
                (Token::One, Some(_)) => {}
                (Token::Literal(a), Some(Token::Literal(b))) if a == b => {}
                (Token::Literal(_), Some(_)) => return false,
            }
        }
        theirs.len() == self.tokens.len()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            match t {
                Token::Literal(l) => f.write_str(l)?,
                Token::One => f.write_str("*")?,
                Token::Tail => f.write_str(">")?,
            }
        }
        Ok(())
    }
}

/// Convenience wrapper over [`Pattern::matches`] for well-formed inputs.
pub fn match_subject(pattern: &str, subject: &str) -> bool {
    match (Pattern::parse(pattern), Pattern::subject(subject)) {
        (Ok(p), Ok(s)) => p.matches(&s),
        _ => false,
    }
}
