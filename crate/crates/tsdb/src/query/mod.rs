mod ast;
mod eval;
mod parser;

pub use ast::{AggOp, Aggregation, QueryAst, RangeFunc, RangeFunction, Selector};
pub use eval::{EvalError, Matrix, MatrixSeries, QueryError, MAX_STEPS};
pub use parser::{parse_query, ParseError};
