use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use minimon_core::{bin_start, LabelMatcher, MetricPoint, Resolution, SeriesKey, SharedClock, Timestamp, DAY_MS, HOUR_MS, MINUTE_MS};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bin::{AggregateBin, Summary};
use crate::index::{InvertedIndex, SeriesId};

/// Rollup tiers in cascade order; `tier_index` maps a resolution into it.
pub(crate) const TIERS: [Resolution; 5] = Resolution::BINNED;

pub(crate) fn tier_index(res: Resolution) -> Option<usize> {
    TIERS.iter().position(|r| *r == res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub raw_days: u32,
    pub m12_days: u32,
    /// Applies to the 1h, 1d, 7d and 30d tiers.
    pub coarse_days: u32,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy { raw_days: 15, m12_days: 7, coarse_days: 1825 }
    }
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.raw_days == 0 || self.m12_days == 0 || self.coarse_days == 0 {
            return Err("retention periods must be positive".into());
        }
        Ok(())
    }

    fn keep(&self, res: Resolution) -> Duration {
        let days = match res {
            Resolution::Raw => self.raw_days,
            Resolution::M12 => self.m12_days,
            _ => self.coarse_days,
        };
        Duration::from_millis(days as u64 * DAY_MS)
    }
}

#[derive(Debug, Clone)]
pub struct TsdbConfig {
    pub retention: RetentionPolicy,
    /// How long after a 12-minute window closes before it is finalized.
    pub grace: Duration,
    /// How far ahead of "now" a sample may be stamped.
    pub future_skew: Duration,
    /// Staleness bound for instant (non-range) selectors.
    pub lookback: Duration,
}

impl Default for TsdbConfig {
    fn default() -> Self {
        TsdbConfig {
            retention: RetentionPolicy::default(),
            grace: Duration::from_millis(MINUTE_MS),
            future_skew: Duration::from_millis(HOUR_MS),
            lookback: Duration::from_millis(5 * MINUTE_MS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WriteError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("OUT_OF_WINDOW: timestamp {ts} {reason}")]
    OutOfWindow { ts: Timestamp, reason: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalityStats {
    pub active_series: u64,
    pub total_points: u64,
    pub inverted_index_entries: u64,
    /// Series first seen during the last 24 hours.
    pub daily_churn: u64,
    /// Distinct series keys ever written, including retired ones.
    pub series_ever_seen: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub raw_points: u64,
    pub bins: BTreeMap<Resolution, u64>,
    pub series_removed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct SeriesData {
    pub key: SeriesKey,
    /// Sorted by timestamp; equal timestamps keep arrival order.
    pub raw: Vec<(u64, f64)>,
    pub bins: [BTreeMap<u64, Summary>; 5],
}

impl SeriesData {
    fn new(key: SeriesKey) -> Self {
        SeriesData { key, raw: Vec::new(), bins: Default::default() }
    }

    fn insert(&mut self, ts: u64, value: f64) {
        let at = self.raw.partition_point(|(t, _)| *t <= ts);
        self.raw.insert(at, (ts, value));
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty() && self.bins.iter().all(BTreeMap::is_empty)
    }

    /// Finalizes every window whose start lies in `ranges[tier]`.
    fn finalize(&mut self, ranges: &[(u64, u64); 5]) -> usize {
        let mut created = 0;
        let (lo, hi) = ranges[0];
        let width = TIERS[0].duration_ms().unwrap();
        if hi > lo {
            let a = self.raw.partition_point(|(t, _)| *t < lo);
            let b = self.raw.partition_point(|(t, _)| *t < hi);
            let mut window: Vec<(u64, f64)> = Vec::new();
            let flush = |window: &mut Vec<(u64, f64)>, bins: &mut BTreeMap<u64, Summary>| {
                if window.is_empty() {
                    return 0;
                }
                // summing in (ts, value) order makes bins independent of arrival order
                window.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
                let start = window[0].0 - window[0].0 % width;
                let mut s = Summary::of(window[0].1);
                for (_, v) in &window[1..] {
                    s.add(*v);
                }
                window.clear();
                if let std::collections::btree_map::Entry::Vacant(e) = bins.entry(start) {
                    e.insert(s);
                    1
                } else {
                    0
                }
            };
            let mut current = None;
            for &(t, v) in &self.raw[a..b] {
                let start = t - t % width;
                if current != Some(start) {
                    created += flush(&mut window, &mut self.bins[0]);
                    current = Some(start);
                }
                window.push((t, v));
            }
            created += flush(&mut window, &mut self.bins[0]);
        }

        for (i, res) in TIERS.iter().enumerate().skip(1) {
            let (lo, hi) = ranges[i];
            if hi <= lo {
                continue;
            }
            let child = tier_index(res.child().unwrap()).unwrap();
            let width = res.duration_ms().unwrap();
            let mut merged: BTreeMap<u64, Summary> = BTreeMap::new();
            for (start, s) in self.bins[child].range(lo..hi) {
                let parent = start - start % width;
                merged.entry(parent).and_modify(|m| m.merge(s)).or_insert(*s);
            }
            for (start, s) in merged {
                if let std::collections::btree_map::Entry::Vacant(e) = self.bins[i].entry(start) {
                    e.insert(s);
                    created += 1;
                }
            }
        }
        created
    }
}

#[derive(Default)]
pub(crate) struct Table {
    pub by_key: HashMap<SeriesKey, SeriesId>,
    pub series: BTreeMap<SeriesId, Arc<RwLock<SeriesData>>>,
    pub index: InvertedIndex,
    pub next_id: SeriesId,
    pub first_seen: HashMap<SeriesKey, Timestamp>,
}

impl Table {
    pub fn add_series(&mut self, data: SeriesData) -> SeriesId {
        let id = self.next_id;
        self.next_id += 1;
        self.index.insert(id, &data.key);
        self.by_key.insert(data.key.clone(), id);
        self.series.insert(id, Arc::new(RwLock::new(data)));
        id
    }

    /// Ids of series whose name matches and which satisfy every matcher.
    /// Equality matchers on non-empty values narrow through postings first.
    pub fn select(&self, metric: &str, matchers: &[LabelMatcher]) -> Vec<SeriesId> {
        let Some(by_name) = self.index.series_for_name(metric) else {
            return Vec::new();
        };
        let mut candidates: Vec<SeriesId> = by_name.iter().copied().collect();
        for m in matchers {
            if m.op == minimon_core::LabelOp::Eq && !m.value.is_empty() {
                let Some(posting) = self.index.posting(&m.name, &m.value) else {
                    return Vec::new();
                };
                candidates.retain(|id| posting.contains(id));
            }
        }
        candidates.retain(|id| {
            let s = self.series[id].read();
            matchers.iter().all(|m| m.matches(&s.key.tags))
        });
        candidates
    }
}

/// The time-series store.
pub struct Tsdb {
    pub(crate) config: TsdbConfig,
    pub(crate) clock: SharedClock,
    pub(crate) table: RwLock<Table>,
    /// Per tier: every window starting before this instant is final.
    pub(crate) horizons: [AtomicU64; 5],
    /// Last retention cut: raw first, then one per tier. Data older than
    /// its floor may have been dropped.
    pub(crate) floors: [AtomicU64; 6],
    pub(crate) total_points: AtomicU64,
    maintenance: Mutex<()>,
}

impl std::fmt::Debug for Tsdb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tsdb").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Tsdb {
    pub fn new(config: TsdbConfig, clock: SharedClock) -> Self {
        Tsdb {
            config,
            clock,
            table: RwLock::new(Table::default()),
            horizons: Default::default(),
            floors: Default::default(),
            total_points: AtomicU64::new(0),
            maintenance: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &TsdbConfig {
        &self.config
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    /// Appends one sample. Rejects non-finite values, samples outside
    /// `(now - raw_days, now + future_skew)`, and samples landing in an
    /// already finalized 12-minute window.
    pub fn write(&self, p: MetricPoint) -> Result<(), WriteError> {
        if !p.value.is_finite() {
            return Err(WriteError::NonFinite(p.value));
        }
        let now = self.clock.now();
        let oldest = now.saturating_sub(self.config.retention.keep(Resolution::Raw));
        if p.ts <= oldest {
            return Err(WriteError::OutOfWindow { ts: p.ts, reason: "is older than raw retention" });
        }
        if p.ts >= now.saturating_add(self.config.future_skew) {
            return Err(WriteError::OutOfWindow { ts: p.ts, reason: "is too far in the future" });
        }
        let ts = p.ts.as_millis();
        loop {
            {
                let table = self.table.read();
                if let Some(id) = table.by_key.get(&p.key) {
                    let mut series = table.series[id].write();
                    if ts < self.horizons[0].load(Ordering::SeqCst) {
                        return Err(WriteError::OutOfWindow { ts: p.ts, reason: "falls in a finalized window" });
                    }
                    series.insert(ts, p.value);
                    self.total_points.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
            }
            let mut table = self.table.write();
            if !table.by_key.contains_key(&p.key) {
                table.first_seen.entry(p.key.clone()).or_insert(now);
                table.add_series(SeriesData::new(p.key.clone()));
            }
        }
    }

    /// Finalizes every closed, not yet finalized window of every tier and
    /// returns how many bins were created. Calling it again with the same
    /// `now` creates nothing.
    pub fn downsample_tick(&self, now: Timestamp) -> usize {
        let _guard = self.maintenance.lock();
        let target = now.saturating_sub(self.config.grace);
        let mut ranges = [(0u64, 0u64); 5];
        for (i, res) in TIERS.iter().enumerate() {
            let new = bin_start(target, *res).unwrap().as_millis();
            let old = self.horizons[i].load(Ordering::SeqCst);
            if new > old {
                self.horizons[i].store(new, Ordering::SeqCst);
                ranges[i] = (old, new);
            }
        }
        if ranges.iter().all(|(lo, hi)| hi <= lo) {
            return 0;
        }
        let table = self.table.read();
        table.series.values().map(|s| s.write().finalize(&ranges)).sum()
    }

    /// Drops raw samples and bins older than their tier's retention and
    /// retires series left with no data.
    pub fn apply_ts_retention(&self, now: Timestamp) -> RetentionReport {
        let _guard = self.maintenance.lock();
        let policy = self.config.retention;
        let raw_cut = now.saturating_sub(policy.keep(Resolution::Raw)).as_millis();
        let mut report = RetentionReport::default();
        for res in TIERS {
            report.bins.insert(res, 0);
        }

        self.floors[0].fetch_max(raw_cut, Ordering::SeqCst);
        for (i, res) in TIERS.iter().enumerate() {
            self.floors[i + 1].fetch_max(now.saturating_sub(policy.keep(*res)).as_millis(), Ordering::SeqCst);
        }
        let mut emptied = Vec::new();
        {
            let table = self.table.read();
            for (id, series) in &table.series {
                let mut s = series.write();
                let n = s.raw.partition_point(|(t, _)| *t < raw_cut);
                if n > 0 {
                    s.raw.drain(..n);
                    report.raw_points += n as u64;
                }
                for (i, res) in TIERS.iter().enumerate() {
                    let cut = now.saturating_sub(policy.keep(*res)).as_millis();
                    let kept = s.bins[i].split_off(&cut);
                    let dropped = std::mem::replace(&mut s.bins[i], kept).len() as u64;
                    *report.bins.get_mut(res).unwrap() += dropped;
                }
                if s.is_empty() {
                    emptied.push(*id);
                }
            }
        }
        self.total_points.fetch_sub(report.raw_points, Ordering::Relaxed);

        if !emptied.is_empty() {
            let mut table = self.table.write();
            for id in emptied {
                let key = {
                    let s = table.series[&id].read();
                    if !s.is_empty() {
                        continue;
                    }
                    s.key.clone()
                };
                table.series.remove(&id);
                table.by_key.remove(&key);
                table.index.remove(id, &key);
                report.series_removed += 1;
            }
        }
        report
    }

    pub fn cardinality(&self) -> CardinalityStats {
        let now = self.clock.now();
        let day_ago = now.sub_millis(DAY_MS);
        let table = self.table.read();
        CardinalityStats {
            active_series: table.series.len() as u64,
            total_points: self.total_points.load(Ordering::Relaxed),
            inverted_index_entries: table.index.entries(),
            daily_churn: table.first_seen.values().filter(|t| **t > day_ago).count() as u64,
            series_ever_seen: table.first_seen.len() as u64,
        }
    }

    /// Every active series key, sorted.
    pub fn series_keys(&self) -> Vec<SeriesKey> {
        let table = self.table.read();
        let mut keys: Vec<SeriesKey> = table.by_key.keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn raw_points(&self, key: &SeriesKey) -> Vec<(Timestamp, f64)> {
        let table = self.table.read();
        let Some(id) = table.by_key.get(key) else { return Vec::new() };
        let s = table.series[id].read();
        s.raw.iter().map(|(t, v)| (Timestamp::from_millis(*t), *v)).collect()
    }

    /// Finalized bins of one series at one resolution, oldest first.
    pub fn bins(&self, key: &SeriesKey, res: Resolution) -> Vec<AggregateBin> {
        let Some(i) = tier_index(res) else { return Vec::new() };
        let table = self.table.read();
        let Some(id) = table.by_key.get(key) else { return Vec::new() };
        let s = table.series[id].read();
        s.bins[i].iter().map(|(start, sum)| AggregateBin::from_summary(key.clone(), res, *start, sum)).collect()
    }

    /// Instant before which every window of `res` is final.
    pub fn horizon(&self, res: Resolution) -> Timestamp {
        tier_index(res).map(|i| Timestamp::from_millis(self.horizons[i].load(Ordering::SeqCst))).unwrap_or_default()
    }

    /// Keys of the active series matching a selector.
    pub fn select_keys(&self, metric: &str, matchers: &[LabelMatcher]) -> Vec<SeriesKey> {
        let table = self.table.read();
        let mut keys: Vec<SeriesKey> = table.select(metric, matchers).iter().map(|id| table.series[id].read().key.clone()).collect();
        keys.sort();
        keys
    }

    /// True iff every tag pair of every active series has a posting that
    /// contains it and no posting names a retired series.
    pub fn index_consistent(&self) -> bool {
        let table = self.table.read();
        for (id, s) in &table.series {
            let s = s.read();
            for (k, v) in s.key.tags.iter() {
                if !table.index.posting(k, v).is_some_and(|p| p.contains(id)) {
                    return false;
                }
            }
        }
        let ok = table.index.all_postings().all(|(_, _, ids)| ids.iter().all(|id| table.series.contains_key(id)));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use minimon_core::{Clock, ManualClock, TagSet};

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse_rfc3339(s).unwrap()
    }

    fn key(name: &str, tags: &[(&str, &str)]) -> SeriesKey {
        SeriesKey::new(name, TagSet::from_pairs(tags.iter().copied()).unwrap()).unwrap()
    }

    fn store(now: &str) -> (Tsdb, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(ts(now)));
        (Tsdb::new(TsdbConfig::default(), clock.clone()), clock)
    }

    #[test]
    fn first_point_registers_series() {
        let (db, _) = store("2020-01-01T12:00:00Z");
        db.write(MetricPoint::new(key("cpu", &[("host", "a"), ("site", "T1")]), 1.0, ts("2020-01-01T11:59:00Z"))).unwrap();
        let stats = db.cardinality();
        assert_eq!(stats.active_series, 1);
        assert_eq!(stats.inverted_index_entries, 2);
        assert_eq!(stats.total_points, 1);
        assert_eq!(stats.daily_churn, 1);
    }

    #[test]
    fn rejects_non_finite_and_out_of_window() {
        let (db, _) = store("2020-01-21T00:00:00Z");
        let k = key("cpu", &[]);
        assert_eq!(db.write(MetricPoint::new(k.clone(), f64::NAN, ts("2020-01-20T00:00:00Z"))).unwrap_err().to_string(), "value NaN is not finite");
        assert!(matches!(db.write(MetricPoint::new(k.clone(), f64::INFINITY, ts("2020-01-20T00:00:00Z"))), Err(WriteError::NonFinite(_))));
        // 20 days old with 15 days of raw retention
        assert!(matches!(db.write(MetricPoint::new(k.clone(), 1.0, ts("2020-01-01T00:00:00Z"))), Err(WriteError::OutOfWindow { .. })));
        assert!(matches!(db.write(MetricPoint::new(k.clone(), 1.0, ts("2020-01-21T01:00:00Z"))), Err(WriteError::OutOfWindow { .. })));
        db.write(MetricPoint::new(k, 1.0, ts("2020-01-21T00:59:59Z"))).unwrap();
        assert_eq!(db.cardinality().total_points, 1);
    }

    #[test]
    fn cardinality_counts() {
        let (db, _) = store("2020-01-01T12:00:00Z");
        assert_eq!(db.cardinality(), CardinalityStats::default());
        let t = ts("2020-01-01T11:00:00Z");
        db.write(MetricPoint::new(key("a", &[]), 1.0, t)).unwrap();
        db.write(MetricPoint::new(key("a", &[]), 2.0, t.add_millis(1))).unwrap();
        db.write(MetricPoint::new(key("b", &[("x", "1")]), 3.0, t)).unwrap();
        let stats = db.cardinality();
        assert_eq!((stats.active_series, stats.total_points), (2, 3));
    }

    #[test]
    fn one_window_rolls_up() {
        let (db, _) = store("2020-01-01T01:00:00Z");
        let k = key("cpu", &[]);
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            db.write(MetricPoint::new(k.clone(), v, ts("2020-01-01T00:12:00Z").add_millis(i as u64 * 1000))).unwrap();
        }
        let created = db.downsample_tick(ts("2020-01-01T00:25:00Z"));
        assert_eq!(created, 1);
        let bins = db.bins(&k, Resolution::M12);
        assert_eq!(bins.len(), 1);
        let b = &bins[0];
        assert_eq!((b.count, b.sum, b.min, b.max, b.avg()), (3, 6.0, 1.0, 3.0, 2.0));
        assert_eq!(b.window_start, ts("2020-01-01T00:12:00Z"));
        assert_eq!(db.downsample_tick(ts("2020-01-01T00:25:00Z")), 0);
    }

    #[test]
    fn grace_delays_finalization_and_late_points_are_rejected() {
        let (db, _) = store("2020-01-01T01:00:00Z");
        let k = key("cpu", &[]);
        db.write(MetricPoint::new(k.clone(), 1.0, ts("2020-01-01T00:05:00Z"))).unwrap();
        // window [00:00, 00:12) closes at 00:12, grace until 00:13
        assert_eq!(db.downsample_tick(ts("2020-01-01T00:12:30Z")), 0);
        db.write(MetricPoint::new(k.clone(), 2.0, ts("2020-01-01T00:11:59Z"))).unwrap();
        assert_eq!(db.downsample_tick(ts("2020-01-01T00:13:00Z")), 1);
        let err = db.write(MetricPoint::new(k.clone(), 3.0, ts("2020-01-01T00:06:00Z"))).unwrap_err();
        assert!(matches!(err, WriteError::OutOfWindow { reason: "falls in a finalized window", .. }));
        assert_eq!(db.bins(&k, Resolution::M12)[0].count, 2);
    }

    #[test]
    fn retention_two_tiers() {
        let (db, clock) = store("2020-01-01T00:30:00Z");
        let k = key("cpu", &[("site", "T1")]);
        db.write(MetricPoint::new(k.clone(), 5.0, ts("2020-01-01T00:01:00Z"))).unwrap();
        db.downsample_tick(ts("2020-01-01T02:00:00Z"));
        assert_eq!(db.bins(&k, Resolution::H1).len(), 1);

        clock.set(ts("2020-01-09T01:00:00Z"));
        let report = db.apply_ts_retention(clock.now());
        assert_eq!(report.bins[&Resolution::M12], 1);
        assert_eq!(report.bins[&Resolution::H1], 0);
        assert!(db.bins(&k, Resolution::M12).is_empty());
        assert_eq!(db.bins(&k, Resolution::H1).len(), 1);
        // raw is 8 days old, still inside 15 days
        assert_eq!(db.raw_points(&k).len(), 1);

        clock.set(ts("2020-01-17T00:00:00Z"));
        let report = db.apply_ts_retention(clock.now());
        assert_eq!(report.raw_points, 1);
        assert_eq!(db.cardinality().active_series, 1);
        assert!(db.index_consistent());
    }

    #[test]
    fn empty_series_leave_the_index() {
        let (db, clock) = store("2020-01-01T00:30:00Z");
        let k = key("up", &[("job", "x")]);
        db.write(MetricPoint::new(k.clone(), 1.0, ts("2020-01-01T00:29:00Z"))).unwrap();
        clock.set(ts("2020-01-17T00:00:00Z"));
        let report = db.apply_ts_retention(clock.now());
        assert_eq!(report.series_removed, 1);
        let stats = db.cardinality();
        assert_eq!(stats.active_series, 0);
        assert_eq!(stats.inverted_index_entries, 0);
        assert_eq!(stats.series_ever_seen, 1);
        assert!(db.index_consistent());
        assert!(db.select_keys("up", &[]).is_empty());
    }
}
