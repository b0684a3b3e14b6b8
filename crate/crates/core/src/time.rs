use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

pub const SECOND_MS: u64 = 1_000;
pub const MINUTE_MS: u64 = 60 * SECOND_MS;
pub const HOUR_MS: u64 = 60 * MINUTE_MS;
pub const DAY_MS: u64 = 24 * HOUR_MS;

/// Milliseconds since the Unix epoch, UTC.
///
/// Unsigned, so the non-negative invariant is carried by the type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    /// Accepts RFC 3339 with an explicit offset, e.g. `2020-01-01T00:13:00Z`.
    pub fn parse_rfc3339(s: &str) -> Result<Self> {
        let dt = DateTime::parse_from_rfc3339(s).map_err(|e| CoreError::InvalidTimestamp(format!("{s}: {e}")))?;
        let ms = dt.timestamp_millis();
        u64::try_from(ms)
            .map(Timestamp)
            .map_err(|_| CoreError::InvalidTimestamp(format!("{s}: before epoch")))
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.0 as i64).unwrap_or(DateTime::<Utc>::MAX_UTC)
    }

    /// UTC calendar date containing this instant.
    pub fn date(self) -> NaiveDate {
        self.to_datetime().date_naive()
    }

    pub fn from_date(date: NaiveDate) -> Self {
        let ms = date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp_millis();
        Timestamp(ms.max(0) as u64)
    }

    pub fn saturating_add(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_add(d.as_millis() as u64))
    }

    pub fn saturating_sub(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_sub(d.as_millis() as u64))
    }

    pub fn add_millis(self, ms: u64) -> Self {
        Timestamp(self.0.saturating_add(ms))
    }

    pub fn sub_millis(self, ms: u64) -> Self {
        Timestamp(self.0.saturating_sub(ms))
    }

    /// Absolute distance between two instants.
    pub fn abs_diff(self, other: Timestamp) -> Duration {
        Duration::from_millis(self.0.abs_diff(other.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl From<DateTime<Utc>> for Timestamp {
    fn from(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_millis().max(0) as u64)
    }
}

/// Storage resolution of a series: raw samples or one of the rollup tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Resolution {
    Raw,
    M12,
    H1,
    D1,
    D7,
    D30,
}

impl Resolution {
    /// Rollup tiers, finest first.
    pub const BINNED: [Resolution; 5] = [Resolution::M12, Resolution::H1, Resolution::D1, Resolution::D7, Resolution::D30];

    pub const fn duration_ms(self) -> Option<u64> {
        match self {
            Resolution::Raw => None,
            Resolution::M12 => Some(12 * MINUTE_MS),
            Resolution::H1 => Some(HOUR_MS),
            Resolution::D1 => Some(DAY_MS),
            Resolution::D7 => Some(7 * DAY_MS),
            Resolution::D30 => Some(30 * DAY_MS),
        }
    }

    /// The tier a bin of this resolution is merged from. D7 and D30 both
    /// roll up from D1.
    pub const fn child(self) -> Option<Resolution> {
        match self {
            Resolution::Raw | Resolution::M12 => None,
            Resolution::H1 => Some(Resolution::M12),
            Resolution::D1 => Some(Resolution::H1),
            Resolution::D7 | Resolution::D30 => Some(Resolution::D1),
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Resolution::Raw => "raw",
            Resolution::M12 => "12m",
            Resolution::H1 => "1h",
            Resolution::D1 => "1d",
            Resolution::D7 => "7d",
            Resolution::D30 => "30d",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "raw" => Resolution::Raw,
            "12m" | "m12" => Resolution::M12,
            "1h" | "h1" => Resolution::H1,
            "1d" | "d1" => Resolution::D1,
            "7d" | "d7" => Resolution::D7,
            "30d" | "d30" => Resolution::D30,
            _ => return Err(CoreError::UnknownResolution(s.to_string())),
        })
    }
}

/// Start of the epoch-anchored window of `res` containing `ts`.
pub fn bin_start(ts: Timestamp, res: Resolution) -> Result<Timestamp> {
    let width = res.duration_ms().ok_or(CoreError::RawResolution)?;
    Ok(Timestamp(ts.0 - ts.0 % width))
}

/// Midnight UTC of the day containing `ts`.
pub fn day_start(ts: Timestamp) -> Timestamp {
    Timestamp(ts.0 - ts.0 % DAY_MS)
}

/// Parses `<int><unit>` with unit one of `ms`, `s`, `m`, `h`, `d`, `w`.
pub fn parse_duration(s: &str) -> Result<Duration> {
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, unit) = s.split_at(split);
    let err = || CoreError::InvalidDuration(s.to_string());
    if digits.is_empty() {
        return Err(err());
    }
    let n: u64 = digits.parse().map_err(|_| err())?;
    let scale = match unit {
        "ms" => 1,
        "s" => SECOND_MS,
        "m" => MINUTE_MS,
        "h" => HOUR_MS,
        "d" => DAY_MS,
        "w" => 7 * DAY_MS,
        _ => return Err(err()),
    };
    n.checked_mul(scale).map(Duration::from_millis).ok_or_else(err)
}

/// Inverse of [`parse_duration`], using the largest unit that divides evenly.
pub fn format_duration(d: Duration) -> String {
    let ms = d.as_millis() as u64;
    if ms == 0 {
        return "0s".to_string();
    }
    for (unit, scale) in [("w", 7 * DAY_MS), ("d", DAY_MS), ("h", HOUR_MS), ("m", MINUTE_MS), ("s", SECOND_MS)] {
        if ms % scale == 0 {
            return format!("{}{unit}", ms / scale);
        }
    }
    format!("{ms}ms")
}
