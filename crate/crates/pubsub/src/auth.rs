use std::collections::HashMap;

use serde::Deserialize;
use thiserror::Error;

use crate::subject::{Pattern, SubjectError};

/// Token table file:
///
/// ```toml
/// [[tokens]]
/// token = "s3cret"
/// publish = ["cms.>"]
/// subscribe = ["cms.*.exitCode"]
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokensFile {
    #[serde(default)]
    tokens: Vec<TokenEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenEntry {
    token: String,
    #[serde(default)]
    publish: Vec<String>,
    #[serde(default)]
    subscribe: Vec<String>,
}

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("invalid token file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("empty token")]
    Empty,
    #[error("token listed twice")]
    Duplicate,
    #[error(transparent)]
    Pattern(#[from] SubjectError),
}

/// Publish and subscribe allow lists of one token. Empty lists deny all.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grants {
    pub publish: Vec<Pattern>,
    pub subscribe: Vec<Pattern>,
}

impl Grants {
    pub fn may_publish(&self, subject: &Pattern) -> bool {
        self.publish.iter().any(|p| p.matches(subject))
    }

    /// A subscription is allowed when one grant covers every subject the
    /// requested pattern could match.
    pub fn may_subscribe(&self, pattern: &Pattern) -> bool {
        self.subscribe.iter().any(|p| p.covers(pattern))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    grants: HashMap<String, Grants>,
}

impl TokenTable {
    pub fn parse(text: &str) -> Result<TokenTable, TokenError> {
        let file: TokensFile = toml::from_str(text)?;
        let mut table = TokenTable::default();
        for e in file.tokens {
            let parse = |list: &[String]| list.iter().map(|s| Pattern::parse(s)).collect::<Result<Vec<_>, _>>();
            let grants = Grants { publish: parse(&e.publish)?, subscribe: parse(&e.subscribe)? };
            table.insert(e.token, grants)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: impl Into<String>, grants: Grants) -> Result<(), TokenError> {
        let token = token.into();
        if token.is_empty() {
            return Err(TokenError::Empty);
        }
        if self.grants.insert(token, grants).is_some() {
            return Err(TokenError::Duplicate);
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&Grants> {
        self.grants.get(token)
    }

    /// A table with one token allowed to do anything.
    pub fn open_access(token: &str) -> TokenTable {
        let all = Pattern::parse(">").expect("valid pattern");
        let mut t = TokenTable::default();
        t.insert(token, Grants { publish: vec![all.clone()], subscribe: vec![all] }).expect("non-empty token");
        t
    }
}
