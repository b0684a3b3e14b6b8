use crate::{CoreError, Result};

/// Upper bound on identifier length, keeps index keys bounded.
pub const MAX_NAME_LEN: usize = 256;

/// True iff `s` matches `[A-Za-z_][A-Za-z0-9_]*` and is at most
/// [`MAX_NAME_LEN`] bytes long.
pub fn validate_name(s: &str) -> bool {
    let bytes = s.as_bytes();
    match bytes.first() {
        Some(b) if b.is_ascii_alphabetic() || *b == b'_' => {}
        _ => return false,
    }
    bytes.len() <= MAX_NAME_LEN && bytes.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'_')
}

/// Topic names are identifiers joined by `.`, e.g. `docs.condor_job`.
pub fn validate_topic(s: &str) -> Result<()> {
    if s.len() <= MAX_NAME_LEN && s.split('.').all(validate_name) {
        Ok(())
    } else {
        Err(CoreError::InvalidTopic(s.to_string()))
    }
}

pub(crate) fn check_name(s: &str) -> Result<()> {
    if validate_name(s) {
        Ok(())
    } else {
        Err(CoreError::InvalidName(s.to_string()))
    }
}
