//! Library side of the `minimon` command line: configuration, renderers,
//! the document filter syntax, the job simulator and the commands.
//!
//! Exit codes are stable: 0 success, 1 rejected or failed request,
//! 2 malformed input, 3 service unreachable or input file missing,
//! 4 authorization failure.

pub mod cmd;
pub mod config;
pub mod docquery;
pub mod render;
pub mod sim;

pub const EXIT_OK: u8 = 0;
pub const EXIT_REJECTED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_UNREACHABLE: u8 = 3;
pub const EXIT_AUTH: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn rejected(message: impl Into<String>) -> Self {
        Self::new(EXIT_REJECTED, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn unreachable(message: impl Into<String>) -> Self {
        Self::new(EXIT_UNREACHABLE, message)
    }

    /// A named input file that does not exist shares the unreachable code.
    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(EXIT_UNREACHABLE, message)
    }

    pub fn auth(message: impl Into<String>) -> Self {
        Self::new(EXIT_AUTH, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
