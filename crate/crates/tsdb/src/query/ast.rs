use std::fmt;
use std::time::Duration;

use minimon_core::{format_duration, LabelMatcher};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selector {
    pub metric: String,
    pub matchers: Vec<LabelMatcher>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeFunc {
    AvgOverTime,
    MaxOverTime,
    MinOverTime,
    SumOverTime,
    CountOverTime,
    Rate,
}

impl RangeFunc {
    pub const ALL: [RangeFunc; 6] = [
        RangeFunc::AvgOverTime,
        RangeFunc::MaxOverTime,
        RangeFunc::MinOverTime,
        RangeFunc::SumOverTime,
        RangeFunc::CountOverTime,
        RangeFunc::Rate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RangeFunc::AvgOverTime => "avg_over_time",
            RangeFunc::MaxOverTime => "max_over_time",
            RangeFunc::MinOverTime => "min_over_time",
            RangeFunc::SumOverTime => "sum_over_time",
            RangeFunc::CountOverTime => "count_over_time",
            RangeFunc::Rate => "rate",
        }
    }

    pub fn from_name(s: &str) -> Option<RangeFunc> {
        RangeFunc::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeFunction {
    pub func: RangeFunc,
    #[serde(serialize_with = "serialize_window")]
    pub window: Duration,
}

fn serialize_window<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_duration(*d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggOp {
    Sum,
    Avg,
    Max,
    Min,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "sum",
            AggOp::Avg => "avg",
            AggOp::Max => "max",
            AggOp::Min => "min",
        }
    }

    pub fn from_name(s: &str) -> Option<AggOp> {
        [AggOp::Sum, AggOp::Avg, AggOp::Max, AggOp::Min].into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregation {
    pub op: AggOp,
    pub by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryAst {
    pub selector: Selector,
    pub range: Option<RangeFunction>,
    pub aggregation: Option<Aggregation>,
}

impl QueryAst {
    pub fn selector(metric: impl Into<String>, matchers: Vec<LabelMatcher>) -> Self {
        QueryAst { selector: Selector { metric: metric.into(), matchers }, range: None, aggregation: None }
    }
}

pub(crate) fn quote(value: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.write_str("\"")?;
    for c in value.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metric)?;
        if !self.matchers.is_empty() {
            f.write_str("{")?;
            for (i, m) in self.matchers.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}{}", m.name, m.op.as_str())?;
                quote(&m.value, f)?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// Renders back to query text that parses to an equal AST.
impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(agg) = &self.aggregation {
            write!(f, "{} by ({}) ", agg.op.name(), agg.by.join(", "))?;
        }
        match &self.range {
            Some(r) => write!(f, "{}({}[{}])", r.func.name(), self.selector, format_duration(r.window)),
            None => write!(f, "{}", self.selector),
        }
    }
}
