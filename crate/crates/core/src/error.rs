use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("invalid identifier: {0:?}")]
    InvalidName(String),

    #[error("invalid topic name: {0:?}")]
    InvalidTopic(String),

    #[error("bin_start is undefined for the raw resolution")]
    RawResolution,

    #[error("timestamp out of range: {0}")]
    InvalidTimestamp(String),

    #[error("invalid duration {0:?}")]
    InvalidDuration(String),

    #[error("invalid regex {pattern:?}: {reason}")]
    InvalidRegex { pattern: String, reason: String },

    #[error("unknown resolution {0:?}")]
    UnknownResolution(String),
}
