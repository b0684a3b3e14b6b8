//! Acceptance suite. Each criterion prints one PASS or FAIL line with its
//! measurements; the process exits nonzero if any criterion fails.
//!
//! Arguments that do not start with `-` select criteria by substring of
//! their name. `MINIMON_THROUGHPUT_SECS` shortens the throughput run.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use minimon_alerting::{AlertConfig, AlertEngine, AlertState, GroupStatus, SuppressionKind, KNOWN_OUTAGE};
use minimon_archive::Archive;
use minimon_bus::{Bus, BusConfig};
use minimon_core::{Document, ManualClock, MetricPoint, Resolution, SeriesKey, SystemClock, TagSet, Timestamp, DAY_MS, HOUR_MS, MINUTE_MS, SECOND_MS};
use minimon_docstore::{index_name, parse_index_name, DocStore, DocStoreConfig};
use minimon_pubsub::{serve, Client, Event, ProxyConfig, TokenTable};
use minimon_tsdb::{parse_query, RetentionPolicy, Tsdb, TsdbConfig};
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Fixed tolerances.
const REL_TOL: f64 = 1e-9;
const E2E_BUDGET: Duration = Duration::from_secs(120);
const AGG_BUDGET: Duration = Duration::from_secs(30);
const COMPACT_BUDGET: Duration = Duration::from_secs(60);
const MIN_POINTS_PER_SEC: f64 = 4200.0;
const MIN_REDUCTION_RATIO: f64 = 0.80;

const T0: u64 = 1_577_836_800_000; // 2020-01-01T00:00:00Z

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !bool::from($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * b.abs().max(1.0)
}

fn key(name: &str, tags: &[(&str, &str)]) -> SeriesKey {
    SeriesKey::new(name, TagSet::from_pairs(tags.iter().copied()).unwrap()).unwrap()
}

fn ts(ms: u64) -> Timestamp {
    Timestamp::from_millis(ms)
}

fn window_start(t: u64, res: Resolution) -> u64 {
    let w = res.duration_ms().unwrap();
    t - t % w
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap()
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        (1, "end_to_end_pipeline", end_to_end_pipeline),
        (2, "aggregation_oracle", aggregation_oracle),
        (3, "retention", retention),
        (4, "ingestion_throughput", ingestion_throughput),
        (5, "compaction", compaction),
        (6, "pubsub_contract", pubsub_contract),
        (7, "alert_lifecycle", alert_lifecycle),
        (8, "query_language", query_language),
        (9, "bus_durability", bus_durability),
        (10, "cardinality_stats", cardinality_stats),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// 1. Simulated jobs reach the docstore, the archive and the tsdb with no loss.

fn payload_key(v: &Value) -> String {
    v["payload"].to_string()
}

fn end_to_end_pipeline() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let srv = common::Server::start(dir.path(), &[]);
    let start_ms = chrono::Utc::now().timestamp_millis() as u64;
    let start = start_ms.to_string();
    let sim = ["spider-sim", "--seed", "42", "--jobs-per-tick", "10", "--ticks", "20", "--time-scale", "720", "--start", &start];

    let dry = common::run(&[&sim[..], &["--dry-run"]].concat());
    ensure!(dry.status.success(), "dry run failed: {}", common::stderr(&dry));
    let expected: Vec<Value> = common::stdout(&dry).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure!(expected.len() == 200, "simulator produced {} documents", expected.len());
    let want: BTreeSet<String> = expected.iter().map(payload_key).collect();
    ensure!(want.len() == 200, "simulated documents are not distinct");
    let mut want_series: BTreeMap<(String, String), u64> = BTreeMap::new();
    for d in &expected {
        let p = &d["payload"];
        *want_series.entry((p["site"].as_str().unwrap().into(), p["status"].as_str().unwrap().into())).or_default() += 1;
    }

    let o = srv.run(&[&sim[..], &["-o", "json"]].concat());
    ensure!(o.status.success(), "spider-sim exited {:?}: {}", o.status.code(), common::stderr(&o));
    let summary: Value = serde_json::from_str(&common::stdout(&o)).unwrap();
    ensure!(summary["accepted"] == 200 && summary["rejected"] == 0, "injection summary {summary}");

    let last_ms = expected.iter().map(|d| d["timestamp"].as_u64().unwrap()).max().unwrap();
    let days: BTreeSet<NaiveDate> = expected.iter().map(|d| ts(d["timestamp"].as_u64().unwrap()).date()).collect();
    let search = json!({"type": "condor_job", "from": start_ms, "to": last_ms + 1, "limit": 1000}).to_string();
    let at = (last_ms + SECOND_MS).to_string();

    let deadline = Instant::now() + Duration::from_secs(60);
    let (docs, archived, series) = loop {
        let docs: BTreeSet<String> = common::get_json(&srv.url, "/api/v1/docs/search", &[("q", search.clone())]).as_array().unwrap().iter().map(payload_key).collect();
        let mut archived = BTreeSet::new();
        let mut archived_total = 0;
        for day in &days {
            if let Value::Array(a) = common::get_json(&srv.url, "/api/v1/archive/read", &[("type", "condor_job".into()), ("day", day.to_string())]) {
                archived_total += a.len();
                archived.extend(a.iter().map(payload_key));
            }
        }
        let m = common::get_json(&srv.url, "/api/v1/ts/query", &[("q", "count_over_time(condor_job_cpu_hours[1h])".into()), ("from", at.clone()), ("to", at.clone())]);
        let mut series: BTreeMap<(String, String), u64> = BTreeMap::new();
        for s in m.as_array().into_iter().flatten() {
            let tags = &s["tags"];
            let n = s["samples"][0][1].as_f64().unwrap_or(0.0) as u64;
            series.insert((tags["site"].as_str().unwrap_or("").into(), tags["status"].as_str().unwrap_or("").into()), n);
        }
        let done = docs.len() == 200 && archived_total == 200 && series.values().sum::<u64>() == 200;
        if done || Instant::now() > deadline {
            ensure!(archived_total == archived.len(), "archive holds {archived_total} records for {} distinct documents", archived.len());
            break (docs, archived, series);
        }
        std::thread::sleep(Duration::from_millis(250));
    };
    ensure!(docs == want, "docstore holds {} of 200, {} unexpected", docs.intersection(&want).count(), docs.difference(&want).count());
    ensure!(archived == want, "archive holds {} of 200, {} unexpected", archived.intersection(&want).count(), archived.difference(&want).count());
    ensure!(series == want_series, "tsdb per-series counts {series:?} differ from {want_series:?}");
    srv.stop();
    let elapsed = started.elapsed();
    ensure!(elapsed < E2E_BUDGET, "took {elapsed:?}, budget {E2E_BUDGET:?}");
    Ok(format!("docstore=200 archive=200 tsdb_points={} in {} series, runtime {:.1}s < {}s", series.values().sum::<u64>(), series.len(), elapsed.as_secs_f64(), E2E_BUDGET.as_secs()))
}

// 2. Finalized bins equal a brute-force aggregation; coarser tiers conserve finer ones.

#[derive(Debug)]
struct Agg {
    count: u64,
    sum: f64,
    min: f64,
    max: f64,
}

fn brute_agg(points: &[(u64, f64)], start: u64, width: u64) -> Option<Agg> {
    let vs: Vec<f64> = points.iter().filter(|(t, _)| *t >= start && *t < start + width).map(|p| p.1).collect();
    (!vs.is_empty()).then(|| Agg {
        count: vs.len() as u64,
        sum: vs.iter().sum(),
        min: vs.iter().copied().fold(f64::INFINITY, f64::min),
        max: vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn aggregation_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let span = 70 * DAY_MS;
    let end = T0 + span;
    let keys: Vec<SeriesKey> = (0..50).map(|i| key("load", &[("series", &format!("s{i:02}")), ("site", ["T1", "T2", "T3"][i % 3])])).collect();
    let mut points: Vec<(usize, u64, f64)> = (0..1000).map(|_| (rng.random_range(0..keys.len()), T0 + rng.random_range(0..span), rng.random_range(-50.0..150.0))).collect();
    points.sort_by_key(|p| p.1);
    let mut truth: Vec<Vec<(u64, f64)>> = vec![Vec::new(); keys.len()];
    for (k, t, v) in &points {
        truth[*k].push((*t, *v));
    }

    let clock = Arc::new(ManualClock::new(ts(T0)));
    let config = TsdbConfig { retention: RetentionPolicy { raw_days: 400, m12_days: 400, coarse_days: 1825 }, ..Default::default() };
    let db = Tsdb::new(config, clock.clone());
    // a downsampling tick every twelve simulated minutes, writes in between
    let mut now = T0;
    let mut next = 0;
    let close_all = end + 62 * DAY_MS;
    while now < close_all {
        now += 12 * MINUTE_MS;
        clock.set(ts(now));
        while next < points.len() && points[next].1 < now {
            let (k, t, v) = points[next];
            db.write(MetricPoint::new(keys[k].clone(), v, ts(t))).map_err(|e| e.to_string())?;
            next += 1;
        }
        db.downsample_tick(ts(now));
    }

    let mut checked = BTreeMap::new();
    for res in Resolution::BINNED {
        let width = res.duration_ms().unwrap();
        let horizon = db.horizon(res).as_millis();
        for (i, k) in keys.iter().enumerate() {
            let bins = db.bins(k, res);
            let want: BTreeSet<u64> = truth[i].iter().map(|(t, _)| window_start(*t, res)).filter(|s| s + width <= horizon).collect();
            let got: BTreeSet<u64> = bins.iter().map(|b| b.window_start.as_millis()).collect();
            ensure!(got == want, "{res} windows of {k} differ: {} bins, {} expected", got.len(), want.len());
            for b in &bins {
                let o = brute_agg(&truth[i], b.window_start.as_millis(), width).unwrap();
                ensure!(b.count == o.count, "{res} count {} vs {} for {k} at {}", b.count, o.count, b.window_start);
                let avg = o.sum / o.count as f64;
                ensure!(close(b.sum, o.sum) && close(b.min, o.min) && close(b.max, o.max) && close(b.avg(), avg), "{res} {k} at {}: got {b:?}, want {o:?}", b.window_start);
            }
            // cascade conservation against the finer tier
            if let Some(child) = res.child() {
                let children = db.bins(k, child);
                for b in &bins {
                    let lo = b.window_start.as_millis();
                    let parts: Vec<_> = children.iter().filter(|c| c.window_start.as_millis() >= lo && c.window_start.as_millis() < lo + width).collect();
                    let count: u64 = parts.iter().map(|c| c.count).sum();
                    let sum: f64 = parts.iter().map(|c| c.sum).sum();
                    let min = parts.iter().map(|c| c.min).fold(f64::INFINITY, f64::min);
                    let max = parts.iter().map(|c| c.max).fold(f64::NEG_INFINITY, f64::max);
                    ensure!(count == b.count && close(sum, b.sum) && min == b.min && max == b.max, "{res} bin of {k} at {} does not conserve its {child} children", b.window_start);
                }
            }
            *checked.entry(res).or_insert(0) += bins.len();
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < AGG_BUDGET, "took {elapsed:?}, budget {AGG_BUDGET:?}");
    let counts: Vec<String> = checked.iter().map(|(r, n)| format!("{r}={n}")).collect();
    Ok(format!("1000 points, 50 series, bins checked {}, rel tol {REL_TOL:e}", counts.join(" ")))
}

// 3. Retention under a mocked clock, over randomized stores.

fn retention_case(seed: u64) -> Result<(usize, usize), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = T0 + rng.random_range(0..DAY_MS);
    let keys: Vec<SeriesKey> = (0..4).map(|i| key("temp", &[("host", &format!("h{i}"))])).collect();
    let clock = Arc::new(ManualClock::new(ts(s)));
    let db = Tsdb::new(TsdbConfig::default(), clock.clone());
    let docs = DocStore::in_memory(DocStoreConfig::default()).unwrap();
    let mut truth: Vec<Vec<(u64, f64)>> = vec![Vec::new(); keys.len()];
    let write = |k: usize, t: u64, truth: &mut Vec<Vec<(u64, f64)>>| {
        let v = rng_value(t);
        db.write(MetricPoint::new(keys[k].clone(), v, ts(t))).unwrap();
        truth[k].push((t, v));
    };
    let mut history: Vec<(usize, u64)> = (0..300).map(|_| (rng.random_range(0..keys.len()), s - rng.random_range(1..14 * DAY_MS))).collect();
    history.sort_by_key(|p| p.1);
    for (k, t) in history {
        write(k, t, &mut truth);
    }
    let mut doc_days: Vec<Timestamp> = Vec::new();
    for i in 0..400u64 {
        let t = ts(s - 45 * DAY_MS + rng.random_range(0..55 * DAY_MS));
        docs.index_document(Document::new("p", "condor_job", t).with("n", i as i64)).unwrap();
        doc_days.push(t);
    }

    let mut now = s;
    for h in 1..=240u64 {
        now = s + h * HOUR_MS;
        clock.set(ts(now));
        for _ in 0..3 {
            let k = rng.random_range(0..keys.len());
            write(k, now + rng.random_range(0..30 * MINUTE_MS), &mut truth);
        }
        db.downsample_tick(ts(now));
        db.apply_ts_retention(ts(now));
        if h % 24 == 0 {
            docs.apply_doc_retention(ts(now)).unwrap();
        }
    }

    let raw_cut = now - 15 * DAY_MS;
    let m12_cut = now - 7 * DAY_MS;
    for (i, k) in keys.iter().enumerate() {
        let mut want_raw: Vec<(u64, f64)> = truth[i].iter().copied().filter(|(t, _)| *t >= raw_cut).collect();
        want_raw.sort_by_key(|p| p.0);
        let got_raw: Vec<(u64, f64)> = db.raw_points(k).into_iter().map(|(t, v)| (t.as_millis(), v)).collect();
        proptest::prop_assert_eq!(got_raw, want_raw, "raw points of {}", k);
        for res in [Resolution::M12, Resolution::H1, Resolution::D1] {
            let width = res.duration_ms().unwrap();
            let horizon = db.horizon(res).as_millis();
            let floor = if res == Resolution::M12 { m12_cut } else { 0 };
            let want: BTreeSet<u64> = truth[i].iter().map(|(t, _)| window_start(*t, res)).filter(|w| w + width <= horizon && *w >= floor).collect();
            let got: BTreeSet<u64> = db.bins(k, res).iter().map(|b| b.window_start.as_millis()).collect();
            proptest::prop_assert_eq!(got, want, "{} bins of {}", res, k);
        }
    }
    let today = ts(now).date();
    let want_idx: BTreeSet<String> = doc_days.iter().filter(|t| (today - t.date()).num_days() <= 30).map(|t| index_name("condor_job", *t)).collect();
    let got_idx: BTreeSet<String> = docs.indexes().into_iter().map(|i| i.name).collect();
    for name in &got_idx {
        let (_, day) = parse_index_name(name).unwrap();
        proptest::prop_assert!((today - day).num_days() <= 30, "{} survived past 30 days", name);
    }
    proptest::prop_assert_eq!(&got_idx, &want_idx);
    let kept_docs = doc_days.iter().filter(|t| (today - t.date()).num_days() <= 30).count();
    proptest::prop_assert_eq!(docs.doc_count(), kept_docs as u64);
    Ok((got_idx.len(), kept_docs))
}

/// Deterministic value per timestamp so rewrites are reproducible.
fn rng_value(t: u64) -> f64 {
    (t % 1000) as f64 / 10.0
}

fn retention() -> Outcome {
    let cases = 16;
    let config = PropConfig { cases, failure_persistence: None, ..PropConfig::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let indexes = Arc::new(AtomicU64::new(0));
    let tally = indexes.clone();
    runner
        .run(&proptest::num::u64::ANY, move |seed| {
            let (n, _) = retention_case(seed)?;
            tally.fetch_add(n as u64, Ordering::Relaxed);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} seeded cases after 10 simulated days: raw >15d gone, M12 >7d gone, H1/D1 intact, {} daily indexes kept within 30d", indexes.load(Ordering::Relaxed)))
}

// 4. Sustained metric ingestion through the pub/sub bridge into the tsdb.

fn ingestion_throughput() -> Outcome {
    let secs: u64 = std::env::var("MINIMON_THROUGHPUT_SECS").ok().and_then(|s| s.parse().ok()).unwrap_or(60);
    let dir = tempfile::tempdir().unwrap();
    let rt = runtime();
    rt.block_on(async move {
        let mut config = minimon_server::ServiceConfig::new(dir.path());
        config.http_addr = "127.0.0.1:0".parse().unwrap();
        config.pubsub_addr = Some("127.0.0.1:0".parse().unwrap());
        let running = minimon_server::start(config, Arc::new(SystemClock)).await.map_err(|e| e.to_string())?;
        let addr = running.pubsub_addr.unwrap();
        let tsdb = running.service.pipeline.tsdb.clone();
        let bridge = running.service.bridge.clone();

        // offered load of twice the threshold, spread over four connections
        let publishers = 4u64;
        let per_publisher = (2.0 * MIN_POINTS_PER_SEC) as u64 / publishers;
        let window = Duration::from_secs(secs);
        let before = tsdb.cardinality().total_points;
        let started = Instant::now();
        let mut tasks = Vec::new();
        for p in 0..publishers {
            tasks.push(tokio::spawn(async move {
                let mut c = Client::connect(addr, "minimon").await.unwrap();
                let mut sent = 0u64;
                let mut tick = tokio::time::interval(Duration::from_millis(10));
                let per_tick = per_publisher / 100;
                while started.elapsed() < window {
                    tick.tick().await;
                    for _ in 0..per_tick {
                        let now = chrono::Utc::now().timestamp_millis();
                        let msg = json!({"name": "node_load", "tags": {"host": format!("h{}", (sent * publishers + p) % 1000)}, "value": sent as f64, "ts": now});
                        c.publish("metrics.load", msg.to_string().as_bytes()).await.unwrap();
                        sent += 1;
                    }
                }
                sent
            }));
        }
        let mut sent = 0;
        for t in tasks {
            sent += t.await.unwrap();
        }
        let drain = Instant::now() + Duration::from_secs(30);
        while bridge.stats().total() < sent && Instant::now() < drain {
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        let elapsed = started.elapsed().as_secs_f64();
        let indexed = tsdb.cardinality().total_points - before;
        let series = tsdb.select_keys("node_load", &[]).len();
        let rate = indexed as f64 / elapsed;

        // informational: document injection over HTTP
        let http = reqwest::Client::new();
        let base = format!("http://{}", running.http_addr);
        http.put(format!("{base}/api/v1/producers")).json(&minimon_cli::sim::registration("bench")).send().await.unwrap().error_for_status().map_err(|e| e.to_string())?;
        let inject_started = Instant::now();
        let mut docs_accepted = 0u64;
        let mut n = 0u64;
        while inject_started.elapsed() < Duration::from_secs(5) {
            let now = chrono::Utc::now().timestamp_millis() as u64;
            let batch: Vec<Value> = (0..500)
                .map(|i| {
                    n += 1;
                    json!({"timestamp": now + i, "payload": {"job_id": format!("bench-{n}"), "site": "T2_CH_CERN", "status": "completed", "retry_index": 0, "cpu_hours": 1.5}})
                })
                .collect();
            let results: Vec<Value> = http.post(format!("{base}/api/v1/inject")).query(&[("producer", "bench"), ("type", "condor_job")]).json(&batch).send().await.unwrap().json().await.unwrap();
            docs_accepted += results.iter().filter(|r| r["status"] == "ok").count() as u64;
        }
        let per_hour = docs_accepted as f64 / inject_started.elapsed().as_secs_f64() * 3600.0;
        running.shutdown().await.map_err(|e| e.to_string())?;

        ensure!(indexed == sent, "published {sent} points, {indexed} indexed (bridge {:?})", bridge.stats());
        ensure!(series == 1000, "{series} series indexed, expected 1000");
        ensure!(rate >= MIN_POINTS_PER_SEC, "achieved {rate:.0} points/s over {elapsed:.1}s, threshold {MIN_POINTS_PER_SEC}");
        Ok(format!("{indexed} points written and indexed over {elapsed:.1}s = {rate:.0} points/s >= {MIN_POINTS_PER_SEC}; document injection {per_hour:.0} docs/hour (informational)"))
    })
}

// 5. Compaction of a day partition with 80% exact duplicates.

fn compaction() -> Outcome {
    let started = Instant::now();
    let day = NaiveDate::from_ymd_opt(2020, 3, 5).unwrap();
    let t0 = Timestamp::parse_rfc3339("2020-03-05T00:00:00Z").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let total = 100_000usize;
    let unique = total / 5;
    let mut docs: Vec<Document> = (0..unique)
        .map(|i| {
            Document::new("spider", "condor_job", t0.add_millis(rng.random_range(0..DAY_MS)))
                .with("job_id", format!("job-{i}"))
                .with("status", ["completed", "failed", "running"][rng.random_range(0..3)])
                .with("site", ["T1_US_FNAL", "T2_CH_CERN", "T2_DE_DESY"][rng.random_range(0..3)])
                .with("cpu_hours", rng.random_range(0..4000) as f64 / 8.0)
        })
        .collect();
    while docs.len() < total {
        let pick = docs[rng.random_range(0..unique)].clone();
        docs.push(pick);
    }
    docs.shuffle(&mut rng);

    let mut seen = HashSet::new();
    let oracle: Vec<Document> = docs.iter().filter(|d| seen.insert(d.canonical_bytes())).cloned().collect();
    let oracle_bytes: usize = oracle.iter().map(|d| d.canonical_bytes().len()).sum();
    ensure!(oracle.len() == unique, "oracle has {} unique records", oracle.len());

    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::open(dir.path()).map_err(|e| e.to_string())?;
    archive.append("condor_job", &docs).map_err(|e| e.to_string())?;
    let report = archive.compact("condor_job", day, t0.add_millis(DAY_MS + HOUR_MS)).map_err(|e| e.to_string())?;
    let read = archive.read("condor_job", day, &[]).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let removed = (total - oracle.len()) as u64;
    ensure!(report.duplicates_removed == removed && removed == 80_000, "removed {}, oracle {removed}", report.duplicates_removed);
    ensure!(report.reduction_ratio >= MIN_REDUCTION_RATIO, "reduction ratio {:.4} < {MIN_REDUCTION_RATIO}", report.reduction_ratio);
    ensure!(read == oracle, "read back {} records that differ from the dedup oracle", read.len());
    ensure!(elapsed < COMPACT_BUDGET, "took {elapsed:?}, budget {COMPACT_BUDGET:?}");
    let gain = oracle_bytes as f64 / report.bytes_after as f64;
    Ok(format!(
        "removed {} of {total}, reduction_ratio {:.4} >= {MIN_REDUCTION_RATIO} ({} -> {} bytes), compression gain over deduplicated records {gain:.2}x, round trip equals oracle",
        report.duplicates_removed, report.reduction_ratio, report.bytes_before, report.bytes_after
    ))
}

// 6. Pub/sub delivery against a brute-force matcher, no retention, eviction isolation.

const WORDS: [&str; 4] = ["cms", "wma", "exitCode", "t1"];
const TOKEN: &str = "acceptance";

fn subject_matches(pattern: &[&str], subject: &[&str]) -> bool {
    match (pattern.first(), subject.first()) {
        (Some(&">"), _) => !subject.is_empty(),
        (Some(&"*"), Some(_)) => subject_matches(&pattern[1..], &subject[1..]),
        (Some(p), Some(s)) if p == s => subject_matches(&pattern[1..], &subject[1..]),
        (None, None) => true,
        _ => false,
    }
}

fn random_subject(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    (0..rng.random_range(1..4)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
}

fn random_pattern(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.random_range(1..4);
    (0..n)
        .map(|i| match rng.random_range(0..6) {
            0 => "*",
            1 if i + 1 == n => ">",
            _ => WORDS[rng.random_range(0..WORDS.len())],
        })
        .collect()
}

fn pubsub_contract() -> Outcome {
    runtime().block_on(async {
        let delivered = pubsub_delivery_set().await?;
        let late = pubsub_late_subscriber().await?;
        let evicted = pubsub_eviction().await?;
        Ok(format!("{delivered} deliveries over 1000 pattern/subject pairs equal the oracle; late subscriber received {late}; {evicted}"))
    })
}

async fn proxy(max_pending: u64) -> (minimon_pubsub::ProxyHandle, SocketAddr) {
    let h = serve("127.0.0.1:0".parse().unwrap(), TokenTable::open_access(TOKEN), ProxyConfig { max_pending, ..Default::default() }).await.unwrap();
    let addr = h.local_addr;
    (h, addr)
}

async fn pubsub_delivery_set() -> Result<usize, String> {
    let (h, addr) = proxy(8 << 20).await;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // 40 patterns on 10 connections crossed with 25 subjects
    let mut subs = Vec::new();
    for c in 0..10 {
        let mut client = Client::connect(addr, TOKEN).await.unwrap();
        let mut mine = Vec::new();
        for k in 0..4 {
            let p = random_pattern(&mut rng);
            let sid = format!("c{c}s{k}");
            client.subscribe(&p.join("."), &sid).await.unwrap();
            mine.push((sid, p));
        }
        subs.push((client, mine));
    }
    let subjects: Vec<Vec<&str>> = (0..25).map(|_| random_subject(&mut rng)).collect();
    let mut publisher = Client::connect(addr, TOKEN).await.unwrap();
    for (i, s) in subjects.iter().enumerate() {
        publisher.publish(&s.join("."), format!("m{i}").as_bytes()).await.unwrap();
    }
    let mut pairs = 0;
    let mut total = 0;
    for (client, mine) in &mut subs {
        client.ping().await.unwrap();
        let mut got = BTreeSet::new();
        for e in client.drain_events() {
            match e {
                Event::Msg(m) => {
                    got.insert((m.sid, String::from_utf8(m.payload).unwrap()));
                }
                Event::Notice(n) => return Err(format!("unexpected notice {n}")),
            }
        }
        let mut want = BTreeSet::new();
        for (sid, p) in mine.iter() {
            for (i, s) in subjects.iter().enumerate() {
                pairs += 1;
                if subject_matches(p, s) {
                    want.insert((sid.clone(), format!("m{i}")));
                }
            }
        }
        ensure!(got == want, "delivery set differs: got {got:?}, want {want:?}");
        total += got.len();
    }
    ensure!(pairs == 1000, "{pairs} pairs");
    h.shutdown().await;
    Ok(total)
}

async fn pubsub_late_subscriber() -> Result<usize, String> {
    let (h, addr) = proxy(8 << 20).await;
    let mut publisher = Client::connect(addr, TOKEN).await.unwrap();
    for i in 0..100 {
        publisher.publish("cms.wma.exitCode", format!("{i}").as_bytes()).await.unwrap();
    }
    let mut late = Client::connect(addr, TOKEN).await.unwrap();
    late.subscribe("cms.>", "late").await.unwrap();
    late.ping().await.unwrap();
    let received = late.drain_events().len();
    let quiet = late.next_event_within(Duration::from_millis(300)).await.unwrap();
    ensure!(quiet.is_none(), "late subscriber received {quiet:?}");
    h.shutdown().await;
    Ok(received)
}

async fn pubsub_eviction() -> Result<String, String> {
    use tokio::io::AsyncWriteExt;
    let (h, addr) = proxy(256 * 1024).await;
    // never reads its socket; the small receive window keeps the kernel from absorbing the backlog
    let socket = tokio::net::TcpSocket::new_v4().unwrap();
    socket.set_recv_buffer_size(4096).unwrap();
    let mut stalled = socket.connect(addr).await.unwrap();
    stalled.write_all(format!("CONNECT {{\"token\":\"{TOKEN}\"}}\r\nSUB load.> stuck\r\n").as_bytes()).await.unwrap();
    let mut healthy = Vec::new();
    for i in 0..3 {
        let mut c = Client::connect(addr, TOKEN).await.unwrap();
        c.subscribe("load.>", &format!("ok{i}")).await.unwrap();
        healthy.push(c);
    }
    let mut publisher = Client::connect(addr, TOKEN).await.unwrap();
    publisher.ping().await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let n = 3000;
    let readers: Vec<_> = healthy
        .into_iter()
        .map(|mut c| {
            tokio::spawn(async move {
                let mut count = 0;
                while count < n {
                    match c.next_event_within(Duration::from_secs(20)).await.unwrap() {
                        Some(Event::Msg(_)) => count += 1,
                        Some(Event::Notice(_)) | None => break,
                    }
                }
                count
            })
        })
        .collect();
    let payload = vec![b'x'; 4096];
    for _ in 0..n {
        publisher.publish("load.data", &payload).await.unwrap();
    }
    let mut counts = Vec::new();
    for r in readers {
        counts.push(r.await.unwrap());
    }
    let stats = h.broker.stats();
    drop(stalled);
    h.shutdown().await;
    ensure!(counts.iter().all(|c| *c == n), "healthy subscribers received {counts:?} of {n}");
    ensure!(stats.evicted == 1, "evicted {} subscribers", stats.evicted);
    Ok(format!("stalled subscriber evicted, 3 others received {n}/{n} each"))
}

// 7. Alert grouping, silence, inhibition and outage overlay on a scripted timeline.

const ALERT_T0: u64 = 1_767_261_600_000; // 2026-01-01T10:00:00Z

const ALERT_CONFIG: &str = r#"
evaluation_interval = "1m"

[route]
group_by = ["site"]
group_wait = "30s"
group_interval = "5m"
repeat_interval = "4h"
receiver = "log"

[[receivers]]
name = "log"
kind = "STDOUT"

[[rules]]
name = "JobFailures"
query = "failure_rate"
comparator = ">"
threshold = 0.5
for = "2m"
annotations = { summary = "$labels.host on $labels.site failing at $value" }

[[rules]]
name = "NodeDown"
query = "node_up"
comparator = "<"
threshold = 1.0

[[rules]]
name = "ServiceSlow"
query = "latency_seconds"
comparator = ">="
threshold = 2.0

[[inhibit_rules]]
source_matchers = ['alertname="NodeDown"']
target_matchers = ['alertname="ServiceSlow"']
equal_labels = ["host"]

[[silences]]
id = "quiet-t3"
matchers = ['site="T3_ZZ"']
starts_at = "2026-01-01T09:00:00Z"
ends_at = "2026-01-01T14:00:00Z"
creator = "ops"
comment = "planned intervention"
"#;

const OUTAGE_FEED: &str = r#"[
  {"source":"ggus","matchers":["site=\"T1_YY\""],"starts_at":"2026-01-01T10:00:00Z","ends_at":"2026-01-01T12:00:00Z","ticket_id":"GGUS-1234"}
]"#;

fn alert_at(minutes: u64) -> Timestamp {
    ts(ALERT_T0 + minutes * MINUTE_MS)
}

fn play_alerts() -> AlertEngine {
    let clock = Arc::new(ManualClock::new(alert_at(0)));
    let tsdb = Arc::new(Tsdb::new(TsdbConfig::default(), clock.clone()));
    let mut engine = AlertEngine::new(AlertConfig::parse(ALERT_CONFIG).unwrap(), tsdb.clone()).unwrap();
    engine.load_outage_feed(OUTAGE_FEED).unwrap();
    let put = |metric: &str, tags: &[(&str, &str)], v: f64, t: Timestamp| tsdb.write(MetricPoint::new(key(metric, tags), v, t)).unwrap();
    for minute in 0..15 {
        let t = alert_at(minute);
        clock.set(t);
        for host in ["h1", "h2", "h3", "h4", "h5"] {
            put("failure_rate", &[("site", "T2_XX"), ("host", host)], 0.75, t);
        }
        put("failure_rate", &[("site", "T2_XX"), ("host", "h6")], 0.1, t);
        put("failure_rate", &[("site", "T3_ZZ"), ("host", "z1")], 0.9, t);
        put("failure_rate", &[("site", "T1_YY"), ("host", "y1")], 0.9, t);
        put("node_up", &[("site", "T1_AA"), ("host", "a")], 0.0, t);
        put("latency_seconds", &[("site", "T1_AA"), ("host", "a")], 3.5, t);
        put("latency_seconds", &[("site", "T1_AA"), ("host", "b")], 2.5, t);
        engine.tick(t);
        for s in 1..6 {
            let sub = t.add_millis(s * 10 * SECOND_MS);
            clock.set(sub);
            engine.flush(sub);
        }
    }
    engine
}

fn alert_lifecycle() -> Outcome {
    let engine = play_alerts();
    let records = engine.log();
    let label = |a: &minimon_alerting::NotifiedAlert, name: &str| a.labels.get(name).unwrap_or("").to_string();

    // five breaches on one site: one notification, group_wait after they fired
    let burst: Vec<_> = records.iter().filter(|r| r.group_key == r#"{site="T2_XX"}"#).collect();
    ensure!(burst.len() == 1, "{} notifications for the burst", burst.len());
    let fired = alert_at(2);
    ensure!(burst[0].at == fired.add_millis(30 * SECOND_MS), "burst notified at {}, fired at {fired}", burst[0].at);
    let hosts: BTreeSet<String> = burst[0].notification.alerts.iter().map(|a| label(a, "host")).collect();
    ensure!(hosts == ["h1", "h2", "h3", "h4", "h5"].map(String::from).into(), "burst carried {hosts:?}");
    ensure!(burst[0].notification.status == GroupStatus::Firing, "burst status {:?}", burst[0].notification.status);

    let find = |rule: &str, host: &str| engine.instances().find(|i| i.rule == rule && i.labels.get("host") == Some(host)).cloned();
    let z1 = find("JobFailures", "z1").ok_or("no instance for the silenced host")?;
    ensure!(z1.state == AlertState::Firing, "silenced alert is {:?}", z1.state);
    ensure!(z1.suppressed_by.as_ref().map(|s| (s.kind, s.reference.as_str())) == Some((SuppressionKind::Silence, "quiet-t3")), "silence not applied: {:?}", z1.suppressed_by);

    let inhibited = find("ServiceSlow", "a").ok_or("no ServiceSlow on host a")?;
    ensure!(inhibited.suppressed_by.as_ref().map(|s| s.kind) == Some(SuppressionKind::Inhibition), "same-host target not inhibited: {:?}", inhibited.suppressed_by);
    let other = find("ServiceSlow", "b").ok_or("no ServiceSlow on host b")?;
    ensure!(other.suppressed_by.is_none(), "mismatched host suppressed by {:?}", other.suppressed_by);

    let y1 = find("JobFailures", "y1").ok_or("no instance for the outage host")?;
    ensure!(y1.suppressed_by.as_ref().map(|s| (s.kind, s.reference.as_str())) == Some((SuppressionKind::Outage, "GGUS-1234")), "outage not applied: {:?}", y1.suppressed_by);
    ensure!(y1.annotations.get(KNOWN_OUTAGE).map(String::as_str) == Some("GGUS-1234"), "outage annotation {:?}", y1.annotations.get(KNOWN_OUTAGE));

    for r in records {
        for a in &r.notification.alerts {
            let (name, host) = (label(a, "alertname"), label(a, "host"));
            ensure!(host != "z1" && host != "y1" && !(name == "ServiceSlow" && host == "a"), "suppressed alert {name} on {host} was notified");
        }
    }
    let slow_b = records.iter().flat_map(|r| &r.notification.alerts).any(|a| label(a, "alertname") == "ServiceSlow" && label(a, "host") == "b");
    ensure!(slow_b, "uninhibited ServiceSlow on host b was never notified");

    let first = engine.log_text();
    let second = play_alerts().log_text();
    ensure!(!first.is_empty() && first.as_bytes() == second.as_bytes(), "notification logs differ across runs");
    Ok(format!("{} notifications; burst of 5 grouped into 1 at group_wait; silence, inhibition and outage applied; log of {} bytes identical across runs", records.len(), first.len()))
}

// 8. Parser golden cases and evaluation against a brute-force evaluator.

const GOLDEN_ACCEPT: &[(&str, &str)] = &[
    ("cpu", "cpu"),
    (r#"cpu{host="a"}"#, r#"cpu{host="a"}"#),
    (r#"cpu { host = "a" , site != "T2" }"#, r#"cpu{host="a",site!="T2"}"#),
    (r#"cpu{site=~"T[12]_.*"}"#, r#"cpu{site=~"T[12]_.*"}"#),
    ("rate(jobs_completed[1h])", "rate(jobs_completed[1h])"),
    ("avg_over_time(cpu[5m])", "avg_over_time(cpu[5m])"),
    ("max_over_time(cpu[12m])", "max_over_time(cpu[12m])"),
    ("min_over_time(cpu[1d])", "min_over_time(cpu[1d])"),
    ("sum_over_time(cpu[30s])", "sum_over_time(cpu[30s])"),
    ("count_over_time(cpu[7d])", "count_over_time(cpu[1w])"),
    ("rate(cpu[120m])", "rate(cpu[2h])"),
    ("sum by (site) rate(jobs_completed[1h])", "sum by (site) rate(jobs_completed[1h])"),
    ("avg by (site, host) cpu", "avg by (site, host) cpu"),
    ("min by (a,b,c) cpu", "min by (a, b, c) cpu"),
    ("sum", "sum"),
];

const GOLDEN_REJECT: &[(&str, usize)] = &[
    ("", 0),
    ("cpu{host=}", 9),
    ("cpu{host=\"a\"", 12),
    ("cpu{}", 4),
    ("cpu[5m]", 3),
    ("rate(cpu)", 8),
    ("rate(cpu[5m]", 12),
    ("rate(cpu[0m])", 9),
    ("sum by site cpu", 7),
    ("sum by (site)", 13),
    ("cpu extra", 4),
    ("9cpu", 0),
    ("nofunc(cpu[5m])", 6),
];

const SITES: [&str; 3] = ["T1", "T2", "T3"];
const HOSTS: [&str; 4] = ["a", "b", "c", "d"];

type Truth = Vec<(SeriesKey, Vec<(u64, f64)>)>;

fn random_store(rng: &mut ChaCha8Rng, now: u64) -> (Tsdb, Truth, usize) {
    let db = Tsdb::new(TsdbConfig::default(), Arc::new(ManualClock::new(ts(now))));
    let mut truth: BTreeMap<SeriesKey, Vec<(u64, f64)>> = BTreeMap::new();
    let mut points = 0;
    for _ in 0..rng.random_range(1..40) {
        let mut tags = vec![("site", SITES[rng.random_range(0..SITES.len())])];
        if rng.random_bool(0.7) {
            tags.push(("host", HOSTS[rng.random_range(0..HOSTS.len())]));
        }
        let k = key(if rng.random_bool(0.8) { "cpu" } else { "mem" }, &tags);
        for _ in 0..rng.random_range(1..120) {
            let t = now - rng.random_range(0..60 * MINUTE_MS);
            let v = rng.random_range(0..1000) as f64;
            db.write(MetricPoint::new(k.clone(), v, ts(t))).unwrap();
            truth.entry(k.clone()).or_default().push((t, v));
            points += 1;
        }
    }
    let truth = truth
        .into_iter()
        .map(|(k, mut pts)| {
            pts.sort_by_key(|p| p.0);
            (k, pts)
        })
        .collect();
    (db, truth, points)
}

fn brute_range(func: &str, pts: &[(u64, f64)], at: u64, window: u64) -> Option<f64> {
    let w: Vec<(u64, f64)> = pts.iter().copied().filter(|(t, _)| *t > at.saturating_sub(window) && *t <= at).collect();
    let vs: Vec<f64> = w.iter().map(|p| p.1).collect();
    if w.is_empty() {
        return None;
    }
    match func {
        "avg_over_time" => Some(vs.iter().sum::<f64>() / vs.len() as f64),
        "sum_over_time" => Some(vs.iter().sum()),
        "min_over_time" => vs.iter().copied().reduce(f64::min),
        "max_over_time" => vs.iter().copied().reduce(f64::max),
        "count_over_time" => Some(vs.len() as f64),
        _ => {
            let dt = (w.last().unwrap().0 - w[0].0) as f64 / 1000.0;
            let increase: f64 = w.windows(2).map(|p| (p[1].1 - p[0].1).max(0.0)).sum();
            (w.len() >= 2 && dt > 0.0).then(|| increase / dt)
        }
    }
}

fn brute_instant(pts: &[(u64, f64)], at: u64) -> Option<f64> {
    pts.iter().rev().find(|(t, _)| *t <= at && *t > at.saturating_sub(5 * MINUTE_MS)).map(|p| p.1)
}

fn aggregate(op: &str, vs: &[f64]) -> f64 {
    match op {
        "sum" => vs.iter().sum(),
        "avg" => vs.iter().sum::<f64>() / vs.len() as f64,
        "max" => vs.iter().copied().reduce(f64::max).unwrap(),
        _ => vs.iter().copied().reduce(f64::min).unwrap(),
    }
}

fn tag_text(tags: &TagSet) -> String {
    tags.iter().map(|(k, v)| format!("{k}={v:?}")).collect::<Vec<_>>().join(",")
}

type Series = BTreeMap<String, BTreeMap<u64, f64>>;

fn compare(q: &str, got: Series, want: Series) -> Result<(), String> {
    ensure!(got.keys().eq(want.keys()), "{q}: series {:?} vs {:?}", got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
    for (k, g) in &got {
        let w = &want[k];
        ensure!(g.keys().eq(w.keys()), "{q}: {k} has steps {:?}, expected {:?}", g.keys().collect::<Vec<_>>(), w.keys().collect::<Vec<_>>());
        for (t, gv) in g {
            ensure!(close(*gv, w[t]), "{q}: {k} at {t} is {gv}, expected {}", w[t]);
        }
    }
    Ok(())
}

fn query_language() -> Outcome {
    for (input, canonical) in GOLDEN_ACCEPT {
        let ast = parse_query(input).map_err(|e| format!("{input:?} rejected: {e}"))?;
        ensure!(ast.to_string() == *canonical, "{input:?} renders as {ast}, expected {canonical}");
    }
    for (input, pos) in GOLDEN_REJECT {
        match parse_query(input) {
            Ok(ast) => return Err(format!("{input:?} parsed as {ast}")),
            Err(e) => ensure!(e.pos == *pos, "{input:?} failed at {}, expected {pos}", e.pos),
        }
    }
    let golden = GOLDEN_ACCEPT.len() + GOLDEN_REJECT.len();
    ensure!(golden >= 25, "only {golden} golden expressions");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let now = T0 + DAY_MS;
    let step = 5 * MINUTE_MS;
    let (from, to) = (now - 30 * MINUTE_MS, now);
    let steps: Vec<u64> = (0..).map(|i| from + i * step).take_while(|t| *t <= to).collect();
    let mut queries = 0;
    let mut max_points = 0;
    for _ in 0..30 {
        let (db, truth, points) = random_store(&mut rng, now);
        ensure!(points <= 5000, "store of {points} points");
        max_points = max_points.max(points);
        let run = |q: &str| -> Result<Series, String> {
            let m = db.query(q, ts(from), ts(to), Duration::from_millis(step)).map_err(|e| format!("{q}: {e}"))?;
            Ok(m.into_iter().map(|s| (tag_text(&s.tags), s.samples.into_iter().map(|(t, v)| (t.as_millis(), v)).collect())).collect())
        };
        let window = rng.random_range(1..20) * MINUTE_MS;
        let cpu: Vec<&(SeriesKey, Vec<(u64, f64)>)> = truth.iter().filter(|(k, _)| k.name == "cpu").collect();
        for func in ["avg_over_time", "sum_over_time", "min_over_time", "max_over_time", "count_over_time", "rate"] {
            let q = format!("{func}(cpu[{}m])", window / MINUTE_MS);
            let mut want = Series::new();
            for (k, pts) in &cpu {
                let samples: BTreeMap<u64, f64> = steps.iter().filter_map(|t| brute_range(func, pts, *t, window).map(|v| (*t, v))).collect();
                if !samples.is_empty() {
                    want.insert(tag_text(&k.tags), samples);
                }
            }
            compare(&q, run(&q)?, want)?;
            queries += 1;

            for op in ["sum", "avg", "max", "min"] {
                let q = format!("{op} by (site) {func}(cpu[{}m])", window / MINUTE_MS);
                compare(&q, run(&q)?, brute_by(op, &cpu, &steps, |pts, t| brute_range(func, pts, t, window)))?;
                queries += 1;
            }
        }
        for op in ["sum", "avg", "max", "min"] {
            let q = format!("{op} by (site) cpu");
            compare(&q, run(&q)?, brute_by(op, &cpu, &steps, brute_instant))?;
            queries += 1;
        }
    }
    Ok(format!("{golden} golden expressions ({} valid, {} invalid with positions); {queries} queries equal brute force on stores up to {max_points} points", GOLDEN_ACCEPT.len(), GOLDEN_REJECT.len()))
}

fn brute_by(op: &str, series: &[&(SeriesKey, Vec<(u64, f64)>)], steps: &[u64], value: impl Fn(&[(u64, f64)], u64) -> Option<f64>) -> Series {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for (k, pts) in series {
        let group = tag_text(&TagSet::from_pairs([("site", k.tags.get("site").unwrap())]).unwrap());
        for t in steps {
            if let Some(v) = value(pts, *t) {
                groups.entry(group.clone()).or_default().entry(*t).or_default().push(v);
            }
        }
    }
    groups.into_iter().map(|(g, by_t)| (g, by_t.into_iter().map(|(t, vs)| (t, aggregate(op, &vs))).collect())).collect()
}

// 9. Consumers killed mid-batch never skip a record and never go below their cursor.

const GROUPS: [&str; 3] = ["docstore", "tsdb", "archive"];
const BUS_TOPIC: &str = "docs.condor_job";

fn publish_batch(dir: &Path, n: u64, next: &mut u64) -> Result<(), String> {
    let bus = Bus::open(dir, BusConfig::default(), Arc::new(SystemClock)).map_err(|e| e.to_string())?;
    for _ in 0..n {
        let off = bus.publish(BUS_TOPIC, format!("record-{next}").as_bytes()).map_err(|e| e.to_string())?;
        ensure!(off == *next, "published at offset {off}, expected {next}");
        *next += 1;
    }
    bus.sync().map_err(|e| e.to_string())
}

struct RunLog {
    start: HashMap<String, i64>,
    seen: HashMap<String, Vec<u64>>,
}

fn read_run_log(path: &Path) -> RunLog {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    // a line cut short by the kill carries no observation
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut log = RunLog { start: HashMap::new(), seen: HashMap::new() };
    for line in complete.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["start", g, c] => {
                log.start.insert(g.to_string(), c.parse().unwrap());
            }
            [g, off] => log.seen.entry(g.to_string()).or_default().push(off.parse().unwrap()),
            _ => {}
        }
    }
    log
}

fn bus_durability() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bus_dir = dir.path().join("bus");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut published = 0u64;
    let mut observed: HashMap<String, BTreeSet<u64>> = HashMap::new();
    let mut killed_mid_stream = 0;
    let consume = |log: &Path, extra: &[&str]| {
        let mut args = vec!["bus-consume", "--dir", bus_dir.to_str().unwrap(), "--topic", BUS_TOPIC, "--log", log.to_str().unwrap(), "--batch", "16"];
        for g in GROUPS {
            args.extend(["--group", g]);
        }
        args.extend_from_slice(extra);
        common::minimon(&args).stdout(Stdio::null()).stderr(Stdio::piped()).spawn().expect("spawn bus-consume")
    };

    for run in 0..=10 {
        publish_batch(&bus_dir, rng.random_range(200..600), &mut published)?;
        let log = dir.path().join(format!("run{run}.log"));
        if run < 10 {
            let mut child = consume(&log, &["--pause-ms", "3"]);
            std::thread::sleep(Duration::from_millis(rng.random_range(30..250)));
            let killed = child.kill();
            child.wait().map_err(|e| e.to_string())?;
            killed.map_err(|e| e.to_string())?;
        } else {
            // final restart drains everything
            let out = consume(&log, &["--until-idle"]).wait_with_output().map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "final consumer failed: {}", String::from_utf8_lossy(&out.stderr));
        }
        let parsed = read_run_log(&log);
        for g in GROUPS {
            let Some(&start) = parsed.start.get(g) else {
                // killed before the consumer started
                continue;
            };
            let seen = parsed.seen.get(g).cloned().unwrap_or_default();
            for (i, off) in seen.iter().enumerate() {
                ensure!(*off as i64 == start + 1 + i as i64, "run {run}: group {g} saw offset {off} at position {i} after committed {start}");
            }
            if run < 10 && seen.last().is_some_and(|l| *l + 1 < published) {
                killed_mid_stream += 1;
            }
            observed.entry(g.to_string()).or_default().extend(seen);
        }
    }

    let bus = Bus::open(&bus_dir, BusConfig::default(), Arc::new(SystemClock)).map_err(|e| e.to_string())?;
    for g in GROUPS {
        let seen = observed.get(g).cloned().unwrap_or_default();
        let missing = (0..published).filter(|o| !seen.contains(o)).count();
        ensure!(missing == 0, "group {g} never observed {missing} of {published} records");
        ensure!(bus.committed(g, BUS_TOPIC) == published as i64 - 1, "group {g} committed {}", bus.committed(g, BUS_TOPIC));
    }
    ensure!(killed_mid_stream > 0, "no run was killed while records remained");
    Ok(format!("{published} records, 10 kill -9 restarts ({killed_mid_stream} group kills mid-stream), every group observed every record, no observation at or below its committed offset"))
}

// 10. Cardinality statistics against a hash-set oracle and first-seen bookkeeping.

fn cardinality_stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut universe: Vec<SeriesKey> = Vec::new();
    let mut distinct = HashSet::new();
    while universe.len() < 10_000 {
        let mut tags = vec![("host".to_string(), format!("h{}", rng.random_range(0..4000))), ("site".to_string(), SITES[rng.random_range(0..SITES.len())].to_string())];
        if rng.random_bool(0.3) {
            tags.push(("rack".to_string(), format!("r{}", rng.random_range(0..20))));
        }
        let name = ["cpu", "mem", "disk"][rng.random_range(0..3)];
        let k = SeriesKey::new(name, TagSet::from_pairs(tags.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap()).unwrap();
        if distinct.insert(k.clone()) {
            universe.push(k);
        }
    }

    let clock = Arc::new(ManualClock::new(ts(T0)));
    let db = Tsdb::new(TsdbConfig::default(), clock.clone());
    let mut first_seen: HashMap<SeriesKey, u64> = HashMap::new();
    let mut points = 0u64;
    // new series arrive in phases spread over three days; earlier series keep reporting
    let phases = [(0, 5000), (6 * HOUR_MS, 1500), (20 * HOUR_MS, 1500), (30 * HOUR_MS, 1000), (50 * HOUR_MS, 1000)];
    let mut introduced = 0;
    let mut checks = 0;
    for (offset, fresh) in phases {
        let now = T0 + offset;
        clock.set(ts(now));
        let mut batch: Vec<&SeriesKey> = universe[introduced..introduced + fresh].iter().collect();
        for _ in 0..2000.min(introduced) {
            batch.push(&universe[rng.random_range(0..introduced)]);
        }
        introduced += fresh;
        for k in batch {
            db.write(MetricPoint::new(k.clone(), 1.0, ts(now - rng.random_range(0..HOUR_MS)))).map_err(|e| e.to_string())?;
            first_seen.entry(k.clone()).or_insert(now);
            points += 1;
        }
        let stats = db.cardinality();
        let keys: HashSet<&SeriesKey> = first_seen.keys().collect();
        let postings: u64 = keys.iter().map(|k| k.tags.len() as u64).sum();
        let churn = first_seen.values().filter(|t| **t > now.saturating_sub(DAY_MS)).count() as u64;
        ensure!(stats.active_series == keys.len() as u64, "at +{}h: active {} vs oracle {}", offset / HOUR_MS, stats.active_series, keys.len());
        ensure!(stats.series_ever_seen == keys.len() as u64, "series ever seen {} vs {}", stats.series_ever_seen, keys.len());
        ensure!(stats.total_points == points, "total points {} vs {points}", stats.total_points);
        ensure!(stats.inverted_index_entries == postings, "index entries {} vs {postings}", stats.inverted_index_entries);
        ensure!(stats.daily_churn == churn, "at +{}h: churn {} vs first-seen {churn}", offset / HOUR_MS, stats.daily_churn);
        ensure!(db.index_consistent(), "inverted index inconsistent at +{}h", offset / HOUR_MS);
        checks += 1;
    }
    ensure!(introduced == 10_000, "introduced {introduced} series");
    let stats = db.cardinality();
    Ok(format!("{} series, {} points, {} index entries, daily churn {} matched at {checks} checkpoints", stats.active_series, stats.total_points, stats.inverted_index_entries, stats.daily_churn))
}
