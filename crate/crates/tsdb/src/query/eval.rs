use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::time::Duration;

use minimon_core::{TagSet, Timestamp};
use serde::Serialize;
use thiserror::Error;

use super::ast::{AggOp, QueryAst, RangeFunc};
use super::parser::{parse_query, ParseError};
use crate::bin::Summary;
use crate::store::{SeriesData, Tsdb, TIERS};

/// Upper bound on evaluation instants per query.
pub const MAX_STEPS: u64 = 11_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixSeries {
    /// Present for plain selectors; range functions and aggregations drop it.
    pub metric: Option<String>,
    pub tags: TagSet,
    pub samples: Vec<(Timestamp, f64)>,
}

pub type Matrix = Vec<MatrixSeries>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("range start {from} is after end {to}")]
    InvalidRange { from: Timestamp, to: Timestamp },
    #[error("step must be positive")]
    InvalidStep,
    #[error("query spans {0} steps, limit is {MAX_STEPS}")]
    TooManySteps(u64),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One raw point or one substituted bin.
#[derive(Debug, Clone, Copy)]
struct Sample {
    ts: u64,
    value: f64,
    summary: Summary,
}

impl Sample {
    fn raw(ts: u64, v: f64) -> Self {
        Sample { ts, value: v, summary: Summary::of(v) }
    }

    fn bin(ts: u64, s: &Summary) -> Self {
        Sample { ts, value: s.avg(), summary: *s }
    }
}

struct Floors {
    raw: u64,
    tiers: [u64; 5],
}

impl Tsdb {
    pub fn query(&self, text: &str, from: Timestamp, to: Timestamp, step: Duration) -> Result<Matrix, QueryError> {
        let ast = parse_query(text)?;
        Ok(self.eval(&ast, from, to, step)?)
    }

    /// Evaluates at `from, from + step, ...` up to and including `to`.
    pub fn eval(&self, ast: &QueryAst, from: Timestamp, to: Timestamp, step: Duration) -> Result<Matrix, EvalError> {
        if from > to {
            return Err(EvalError::InvalidRange { from, to });
        }
        let step = step.as_millis() as u64;
        if step == 0 {
            return Err(EvalError::InvalidStep);
        }
        let steps = (to.as_millis() - from.as_millis()) / step + 1;
        if steps > MAX_STEPS {
            return Err(EvalError::TooManySteps(steps));
        }
        let instants: Vec<u64> = (0..steps).map(|i| from.as_millis() + i * step).collect();
        let floors = Floors {
            raw: self.floors[0].load(Ordering::SeqCst),
            tiers: std::array::from_fn(|i| self.floors[i + 1].load(Ordering::SeqCst)),
        };
        let lookback = self.config.lookback.as_millis() as u64;

        let selected = {
            let table = self.table.read();
            let ids = table.select(&ast.selector.metric, &ast.selector.matchers);
            ids.iter().map(|id| table.series[id].clone()).collect::<Vec<_>>()
        };

        let mut per_series: Vec<MatrixSeries> = Vec::with_capacity(selected.len());
        for series in selected {
            let s = series.read();
            let mut samples = Vec::new();
            for &t in &instants {
                let value = match &ast.range {
                    Some(r) => {
                        let window = samples_in(&s, &floors, t.saturating_sub(r.window.as_millis() as u64), t);
                        apply(r.func, &window)
                    }
                    None => instant(&s, &floors, t, lookback),
                };
                if let Some(v) = value {
                    samples.push((Timestamp::from_millis(t), v));
                }
            }
            if !samples.is_empty() {
                let metric = ast.range.is_none().then(|| s.key.name.clone());
                per_series.push(MatrixSeries { metric, tags: s.key.tags.clone(), samples });
            }
        }

        let mut out = match &ast.aggregation {
            None => per_series,
            Some(agg) => {
                let mut groups: BTreeMap<TagSet, BTreeMap<Timestamp, Vec<f64>>> = BTreeMap::new();
                for series in per_series {
                    let group = groups.entry(series.tags.project(&agg.by)).or_default();
                    for (t, v) in series.samples {
                        group.entry(t).or_default().push(v);
                    }
                }
                groups
                    .into_iter()
                    .map(|(tags, by_ts)| MatrixSeries {
                        metric: None,
                        tags,
                        samples: by_ts.into_iter().map(|(t, vs)| (t, combine(agg.op, &vs))).collect(),
                    })
                    .collect()
            }
        };
        out.sort_by(|a, b| (&a.metric, &a.tags).cmp(&(&b.metric, &b.tags)));
        Ok(out)
    }
}

fn combine(op: AggOp, vs: &[f64]) -> f64 {
    match op {
        AggOp::Sum => vs.iter().sum(),
        AggOp::Avg => vs.iter().sum::<f64>() / vs.len() as f64,
        AggOp::Max => vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggOp::Min => vs.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Samples for the window `(lo, hi]`. Raw points are used for the part of
/// the window that raw retention still covers; older parts are filled from
/// the finest tier whose retention reaches back to `lo`, and raw points then
/// resume after the last substituted bin.
fn samples_in(s: &SeriesData, floors: &Floors, lo: u64, hi: u64) -> Vec<Sample> {
    let raw_range = |from_excl: u64| {
        let a = s.raw.partition_point(|(t, _)| *t <= from_excl);
        let b = s.raw.partition_point(|(t, _)| *t <= hi);
        s.raw[a..b].iter().map(|(t, v)| Sample::raw(*t, *v))
    };
    if lo >= floors.raw {
        return raw_range(lo).collect();
    }
    let tier = (0..TIERS.len()).find(|i| floors.tiers[*i] <= lo + 1).unwrap_or(TIERS.len() - 1);
    let width = TIERS[tier].duration_ms().unwrap();
    let mut out: Vec<Sample> = s.bins[tier].range(lo + 1..=hi).map(|(start, b)| Sample::bin(*start, b)).collect();
    let resume_after = out.last().map(|b| b.ts + width - 1).unwrap_or(lo).max(lo);
    out.extend(raw_range(resume_after));
    out
}

/// Latest raw value within the lookback, or the average of the finest
/// retained bin whose window contains `t` once raw data has aged out.
fn instant(s: &SeriesData, floors: &Floors, t: u64, lookback: u64) -> Option<f64> {
    let lo = t.saturating_sub(lookback);
    let end = s.raw.partition_point(|(ts, _)| *ts <= t);
    if end > 0 && s.raw[end - 1].0 > lo {
        return Some(s.raw[end - 1].1);
    }
    if lo >= floors.raw {
        return None;
    }
    TIERS.iter().enumerate().find_map(|(i, res)| {
        let width = res.duration_ms().unwrap();
        let (start, b) = s.bins[i].range(..=t).next_back()?;
        (t < start + width).then(|| b.avg())
    })
}

fn apply(func: RangeFunc, w: &[Sample]) -> Option<f64> {
    if w.is_empty() {
        return None;
    }
    Some(match func {
        RangeFunc::AvgOverTime => w.iter().map(|s| s.value).sum::<f64>() / w.len() as f64,
        RangeFunc::SumOverTime => w.iter().map(|s| s.summary.sum).sum(),
        RangeFunc::MinOverTime => w.iter().map(|s| s.summary.min).fold(f64::INFINITY, f64::min),
        RangeFunc::MaxOverTime => w.iter().map(|s| s.summary.max).fold(f64::NEG_INFINITY, f64::max),
        RangeFunc::CountOverTime => w.iter().map(|s| s.summary.count).sum::<u64>() as f64,
        RangeFunc::Rate => {
            let (first, last) = (w.first()?, w.last()?);
            if w.len() < 2 || last.ts == first.ts {
                return None;
            }
            let increase: f64 = w.windows(2).map(|p| (p[1].value - p[0].value).max(0.0)).sum();
            increase / ((last.ts - first.ts) as f64 / 1000.0)
        }
    })
}
