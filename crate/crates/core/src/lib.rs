//! Shared domain types for minimon.
//!
//! Everything here is an immutable value type: timestamps and resolutions,
//! tag sets and canonical series keys, documents and their payload values,
//! and the matcher types used by the query, search, and alerting layers.

mod clock;
mod document;
mod error;
mod matcher;
mod name;
mod series;
mod time;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use document::{Document, FieldValue, Scalar, RESERVED_FIELDS};
pub use error::{CoreError, Result};
pub use matcher::{FieldMatcher, FieldOp, LabelMatcher, LabelOp};
pub use name::{validate_name, validate_topic, MAX_NAME_LEN};
pub use series::{canonical_series_key, MetricPoint, SeriesKey, TagSet};
pub use time::{bin_start, day_start, format_duration, parse_duration, Resolution, Timestamp, DAY_MS, HOUR_MS, MINUTE_MS, SECOND_MS};
