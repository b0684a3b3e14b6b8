//! Client settings. Each value resolves as flag, then environment, then
//! config file, then built-in default.
//!
//! ```toml
//! url = "http://127.0.0.1:9400"
//! pubsub = "127.0.0.1:4222"
//! token = "minimon"
//! format = "table"
//! ```

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use reqwest::Url;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_URL: &str = "http://127.0.0.1:9400";
pub const DEFAULT_PUBSUB: &str = "127.0.0.1:4222";
pub const DEFAULT_TOKEN: &str = "minimon";

pub const ENV_URL: &str = "MINIMON_URL";
pub const ENV_PUBSUB: &str = "MINIMON_PUBSUB";
pub const ENV_TOKEN: &str = "MINIMON_TOKEN";
pub const ENV_CONFIG: &str = "MINIMON_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    #[default]
    Table,
    Sparkline,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub url: Option<String>,
    pub pubsub: Option<String>,
    pub token: Option<String>,
    pub format: Option<Format>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `path`; a missing file at the default location is not an error.
    pub fn load(path: &Path, explicit: bool) -> Result<FileConfig, CliError> {
        match std::fs::read_to_string(path) {
            Ok(text) => FileConfig::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !explicit => Ok(FileConfig::default()),
            Err(e) => Err(CliError::missing(format!("{}: {e}", path.display()))),
        }
    }
}

/// `$HOME/.config/minimon/config.toml`.
pub fn default_path() -> Option<PathBuf> {
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".config/minimon/config.toml"))
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub url: Option<String>,
    pub pubsub: Option<String>,
    pub token: Option<String>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub url: Url,
    pub pubsub: String,
    pub token: String,
    pub format: Format,
}

impl CliConfig {
    pub fn resolve(flags: Overrides, env: impl Fn(&str) -> Option<String>, file: FileConfig) -> Result<CliConfig, CliError> {
        let url = flags.url.or_else(|| env(ENV_URL)).or(file.url).unwrap_or_else(|| DEFAULT_URL.into());
        let url = parse_base_url(&url)?;
        let pubsub = flags.pubsub.or_else(|| env(ENV_PUBSUB)).or(file.pubsub).unwrap_or_else(|| DEFAULT_PUBSUB.into());
        let token = flags.token.or_else(|| env(ENV_TOKEN)).or(file.token).unwrap_or_else(|| DEFAULT_TOKEN.into());
        let format = flags.format.or(file.format).unwrap_or_default();
        Ok(CliConfig { url, pubsub, token, format })
    }

    pub fn endpoint(&self, path: &str) -> Url {
        self.url.join(path.trim_start_matches('/')).expect("path joins onto a base URL")
    }
}

/// Only http(s) URLs with a host are accepted. A trailing slash is added
/// so endpoint paths join below any base path.
pub fn parse_base_url(text: &str) -> Result<Url, CliError> {
    let mut url = Url::parse(text).map_err(|e| CliError::usage(format!("invalid service URL {text:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(CliError::usage(format!("invalid service URL {text:?}: expected http(s)://host[:port]")));
    }
    if !url.path().ends_with('/') {
        let path = format!("{}/", url.path());
        url.set_path(&path);
    }
    Ok(url)
}
