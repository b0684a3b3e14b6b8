//! Time-series store: per-series raw buffers, a 12-minute rollup that
//! cascades into 1h/1d/7d/30d bins, an inverted label index, cardinality
//! accounting and a small query language.

mod bin;
mod index;
mod persist;
pub mod query;
mod store;

pub use bin::{AggregateBin, Summary};
pub use index::SeriesId;
pub use persist::{series_dir_name, PersistError};
pub use query::{parse_query, Matrix, MatrixSeries, ParseError, QueryAst, QueryError};
pub use store::{CardinalityStats, RetentionPolicy, RetentionReport, Tsdb, TsdbConfig, WriteError};
