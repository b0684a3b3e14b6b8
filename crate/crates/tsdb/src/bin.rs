use minimon_core::{Resolution, SeriesKey, Timestamp};
use serde::{Deserialize, Serialize};

/// Count/sum/min/max summary of one window. Merging is associative, which
/// is what lets coarser tiers be built from finer ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(value: f64) -> Self {
        Summary { count: 1, sum: value, min: value, max: value }
    }

    pub fn add(&mut self, value: f64) {
        self.count += 1;
        self.sum += value;
        self.min = self.min.min(value);
        self.max = self.max.max(value);
    }

    pub fn merge(&mut self, other: &Summary) {
        self.count += other.count;
        self.sum += other.sum;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn avg(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// A finalized rollup of one series over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBin {
    pub key: SeriesKey,
    pub resolution: Resolution,
    pub window_start: Timestamp,
    pub count: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

impl AggregateBin {
    pub fn avg(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub(crate) fn from_summary(key: SeriesKey, resolution: Resolution, window_start: u64, s: &Summary) -> Self {
        AggregateBin {
            key,
            resolution,
            window_start: Timestamp::from_millis(window_start),
            count: s.count,
            sum: s.sum,
            min: s.min,
            max: s.max,
        }
    }
}
