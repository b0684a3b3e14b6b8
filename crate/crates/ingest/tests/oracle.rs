//! Injection accounting against a size-sum oracle, and scraping against a
//! live local exporter.

use std::sync::Arc;
use std::time::Duration;

use minimon_bus::{Bus, BusConfig};
use minimon_core::{Document, ManualClock, SeriesKey, TagSet, Timestamp, DAY_MS};
use minimon_ingest::{registration, FieldType, InjectResult, Injector, Reason, Registry, ScrapeStatus, ScrapeTarget, Scraper};
use minimon_tsdb::{Tsdb, TsdbConfig};
use proptest::prelude::*;
use serde_json::json;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

const NOW: u64 = 1_600_000_000_000;

fn injector(dir: &std::path::Path, quota: u64) -> (Arc<Bus>, Injector) {
    let clock = Arc::new(ManualClock::new(Timestamp::from_millis(NOW)));
    let bus = Arc::new(Bus::open(dir, BusConfig::default(), clock).unwrap());
    let registry = Arc::new(Registry::in_memory());
    registry
        .register(registration("spider", "condor_job", &[("status", FieldType::String, true), ("cpu", FieldType::Float, false), ("note", FieldType::String, false)], quota), false)
        .unwrap();
    (bus.clone(), Injector::new(registry, bus))
}

#[derive(Debug, Clone)]
enum Raw {
    Valid { note_len: usize, cpu: i64 },
    WrongType,
    Missing,
    Skewed,
    Malformed,
}

fn arb_raw() -> impl Strategy<Value = Raw> {
    prop_oneof![
        6 => (0usize..300, 0i64..100).prop_map(|(note_len, cpu)| Raw::Valid { note_len, cpu }),
        1 => Just(Raw::WrongType),
        1 => Just(Raw::Missing),
        1 => Just(Raw::Skewed),
        1 => Just(Raw::Malformed),
    ]
}

fn render(raw: &Raw, ts: u64) -> serde_json::Value {
    match raw {
        Raw::Valid { note_len, cpu } => json!({"timestamp": ts, "payload": {"status": "ok", "cpu": cpu, "note": "n".repeat(*note_len)}}),
        Raw::WrongType => json!({"timestamp": ts, "payload": {"status": 7}}),
        Raw::Missing => json!({"timestamp": ts, "payload": {"cpu": 1.5}}),
        Raw::Skewed => json!({"timestamp": ts - 8 * DAY_MS, "payload": {"status": "ok"}}),
        Raw::Malformed => json!({"ts": ts}),
    }
}

fn canonical_len(v: &serde_json::Value) -> u64 {
    let doc = Document {
        payload: serde_json::from_value(v["payload"].clone()).unwrap(),
        producer: "spider".into(),
        timestamp: Timestamp::from_millis(v["timestamp"].as_u64().unwrap()),
        doc_type: "condor_job".into(),
    };
    doc.canonical_bytes().len() as u64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn published_iff_admitted(batches in prop::collection::vec(prop::collection::vec(arb_raw(), 0..12), 1..6), quota in 200u64..4000) {
        let dir = tempfile::tempdir().unwrap();
        let (bus, inj) = injector(dir.path(), quota);
        let now = Timestamp::from_millis(NOW);
        let mut used = 0u64;
        let mut published = 0u64;
        for batch in &batches {
            let values: Vec<_> = batch.iter().map(|r| render(r, NOW)).collect();
            let res = inj.inject("spider", "condor_job", &values, now).unwrap();
            prop_assert_eq!(res.len(), batch.len());
            // oracle: walk the batch, charging valid documents until the first overrun
            let mut tripped = false;
            for ((raw, value), got) in batch.iter().zip(&values).zip(&res) {
                let want = if tripped {
                    Some(Reason::QuotaExceeded)
                } else {
                    match raw {
                        Raw::Valid { .. } => {
                            let size = canonical_len(value);
                            if used + size > quota {
                                tripped = true;
                                Some(Reason::QuotaExceeded)
                            } else {
                                used += size;
                                None
                            }
                        }
                        Raw::WrongType => Some(Reason::TypeMismatch),
                        Raw::Missing => Some(Reason::MissingRequired),
                        Raw::Skewed => Some(Reason::TimestampSkew),
                        Raw::Malformed => Some(Reason::Malformed),
                    }
                };
                prop_assert_eq!(got.reason(), want);
                if let InjectResult::Ok { offset, .. } = got {
                    prop_assert_eq!(*offset, published);
                    published += 1;
                }
            }
        }
        prop_assert_eq!(bus.next_offset("docs.condor_job"), published);
        prop_assert_eq!(inj.quota_used("spider", "condor_job", now), used);
        prop_assert!(used <= quota);
    }
}

#[test]
fn concurrent_injection_never_overdraws() {
    let dir = tempfile::tempdir().unwrap();
    let (bus, inj) = injector(dir.path(), 50_000);
    let inj = Arc::new(inj);
    let doc = json!({"timestamp": NOW, "payload": {"status": "ok", "note": "x".repeat(100)}});
    let size = canonical_len(&doc);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let inj = inj.clone();
            let doc = doc.clone();
            std::thread::spawn(move || {
                let mut ok = 0u64;
                for _ in 0..50 {
                    ok += inj.inject("spider", "condor_job", &[doc.clone()], Timestamp::from_millis(NOW)).unwrap().iter().filter(|r| r.is_ok()).count() as u64;
                }
                ok
            })
        })
        .collect();
    let ok: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(ok, 50_000 / size);
    assert_eq!(bus.next_offset("docs.condor_job"), ok);
    assert_eq!(inj.quota_used("spider", "condor_job", Timestamp::from_millis(NOW)), ok * size);
}

/// Serves `body` with status 200 to every connection.
async fn exporter(body: &'static str) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        loop {
            let Ok((mut sock, _)) = listener.accept().await else { return };
            tokio::spawn(async move {
                let mut buf = vec![0u8; 4096];
                let _ = sock.read(&mut buf).await;
                let resp = format!("HTTP/1.1 200 OK\r\ncontent-type: text/plain\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
                let _ = sock.write_all(resp.as_bytes()).await;
            });
        }
    });
    format!("http://{addr}/metrics")
}

#[tokio::test]
async fn scrape_live_targets() {
    let clock = Arc::new(ManualClock::new(Timestamp::from_millis(NOW)));
    let tsdb = Arc::new(Tsdb::new(TsdbConfig::default(), clock.clone()));
    let good = exporter("# TYPE up gauge\nup 1\nhttp_reqs{code=\"200\"} 17\n").await;
    let bad = exporter("bad{{\n").await;
    let site = TagSet::from_pairs([("site", "T1")]).unwrap();
    let targets = vec![
        ScrapeTarget::new(good, Duration::from_secs(1), site.clone()).unwrap(),
        ScrapeTarget::new(bad, Duration::from_secs(1), TagSet::new()).unwrap(),
        ScrapeTarget::new("http://127.0.0.1:1/metrics", Duration::from_secs(1), TagSet::new()).unwrap(),
    ];
    let scraper = Scraper::new(targets, tsdb.clone(), clock);
    assert_eq!(scraper.scrape(0).await, Some(2));
    assert_eq!(scraper.scrape(1).await, Some(0));
    assert_eq!(scraper.scrape(2).await, Some(0));
    let status: Vec<_> = scraper.targets().iter().map(|t| t.last_status).collect();
    assert_eq!(status, vec![ScrapeStatus::Ok, ScrapeStatus::Fail, ScrapeStatus::Fail]);
    assert!(scraper.targets()[1].last_error.as_ref().unwrap().contains("parse error"));
    let up = SeriesKey::new("up", site).unwrap();
    assert_eq!(tsdb.raw_points(&up), vec![(Timestamp::from_millis(NOW), 1.0)]);
    assert_eq!(tsdb.cardinality().active_series, 2);
}
