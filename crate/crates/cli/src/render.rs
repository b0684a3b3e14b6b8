//! Terminal renderers for query results.

use std::collections::BTreeMap;
use std::fmt::Write;

use minimon_core::Timestamp;
use serde::Deserialize;
use serde_json::Value;

pub const BLOCKS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
/// Widest sparkline printed; longer series are averaged into buckets.
pub const SPARK_WIDTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Series {
    pub metric: Option<String>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub samples: Vec<(u64, f64)>,
}

impl Series {
    pub fn label(&self) -> String {
        let tags = self.tags.iter().map(|(k, v)| format!("{k}={v:?}")).collect::<Vec<_>>().join(",");
        match (&self.metric, tags.is_empty()) {
            (Some(m), true) => m.clone(),
            (Some(m), false) => format!("{m}{{{tags}}}"),
            (None, _) => format!("{{{tags}}}"),
        }
    }
}

/// One block character per value, scaled between the series' own min and
/// max. A constant series renders at the lowest level.
pub fn sparkline(values: &[f64]) -> String {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return ' ';
            }
            if max <= min {
                return BLOCKS[0];
            }
            let level = ((v - min) / (max - min) * (BLOCKS.len() - 1) as f64).round() as usize;
            BLOCKS[level.min(BLOCKS.len() - 1)]
        })
        .collect()
}

/// Averages `values` into at most `width` consecutive buckets.
pub fn fit(values: &[f64], width: usize) -> Vec<f64> {
    if values.len() <= width || width == 0 {
        return values.to_vec();
    }
    (0..width)
        .map(|b| {
            let lo = b * values.len() / width;
            let hi = (b + 1) * values.len() / width;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn format_ts(ms: u64) -> String {
    Timestamp::from_millis(ms).to_string()
}

/// Left-aligned columns separated by two spaces.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

pub fn matrix_table(series: &[Series]) -> String {
    let rows: Vec<Vec<String>> = series
        .iter()
        .flat_map(|s| {
            let label = s.label();
            s.samples.iter().map(move |(ts, v)| vec![label.clone(), format_ts(*ts), format_value(*v)])
        })
        .collect();
    table(&["SERIES", "TIMESTAMP", "VALUE"], &rows)
}

pub fn matrix_sparklines(series: &[Series]) -> String {
    let width = series.iter().map(|s| s.label().chars().count()).max().unwrap_or(0);
    let mut out = String::new();
    for s in series {
        let values: Vec<f64> = s.samples.iter().map(|(_, v)| *v).collect();
        let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let last = values.last().copied().unwrap_or(f64::NAN);
        let _ = writeln!(out, "{:<width$}  {}  min={} max={} last={}", s.label(), sparkline(&fit(&values, SPARK_WIDTH)), format_value(min), format_value(max), format_value(last));
    }
    out
}

/// Documents as a table: timestamp, producer, then every top-level
/// payload field seen, in name order. Nested objects print as JSON.
pub fn docs_table(docs: &[Value]) -> String {
    let mut fields = std::collections::BTreeSet::new();
    for d in docs {
        if let Some(p) = d["payload"].as_object() {
            fields.extend(p.keys().cloned());
        }
    }
    let mut header = vec!["TIMESTAMP", "PRODUCER"];
    header.extend(fields.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            let mut row = vec![d["timestamp"].as_u64().map(format_ts).unwrap_or_default(), d["producer"].as_str().unwrap_or_default().to_string()];
            row.extend(fields.iter().map(|f| match &d["payload"][f] {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            row
        })
        .collect();
    table(&header, &rows)
}

/// Operator summary of the service status document.
pub fn status_text(s: &Value) -> String {
    let mut out = String::new();
    let n = |v: &Value| v.as_u64().unwrap_or(0);
    let _ = writeln!(out, "uptime      {}s (started {})", n(&s["uptime_seconds"]), s["started_at"].as_u64().map(format_ts).unwrap_or_default());
    let i = &s["ingest"];
    let _ = writeln!(out, "ingest      accepted={} rejected={} bytes={} producers={}", n(&i["accepted"]), n(&i["rejected"]), n(&i["accepted_bytes"]), n(&s["producers"]));
    for t in s["bus"].as_array().into_iter().flatten() {
        let committed: Vec<String> = t["committed"].as_object().into_iter().flatten().map(|(g, o)| format!("{g}={o}")).collect();
        let _ = writeln!(out, "bus         {} offsets={}..{} committed {}", t["topic"].as_str().unwrap_or("?"), n(&t["base_offset"]), n(&t["next_offset"]), committed.join(" "));
    }
    for (name, k) in s["sinks"].as_object().into_iter().flatten() {
        let _ = writeln!(out, "sink        {name} consumed={} stored={} skipped={} backlog={} decode_errors={} rejected_points={}", n(&k["consumed"]), n(&k["stored"]), n(&k["skipped"]), n(&k["backlog"]), n(&k["decode_errors"]), n(&k["rejected_points"]));
    }
    let _ = writeln!(out, "docstore    documents={} indexes={}", n(&s["docstore"]["documents"]), n(&s["docstore"]["indexes"]));
    let t = &s["tsdb"];
    let _ = writeln!(out, "tsdb        active_series={} points={} index_entries={} daily_churn={}", n(&t["active_series"]), n(&t["total_points"]), n(&t["inverted_index_entries"]), n(&t["daily_churn"]));
    let _ = writeln!(out, "archive     partitions={}", n(&s["archive"]["partitions"]));
    if let Some(p) = s["pubsub"].as_object() {
        let b = &p["broker"];
        let _ = writeln!(out, "pubsub      {} bridge={}", compact(b), compact(&p["bridge"]));
    }
    for t in s["scrape_targets"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "scrape      {} {}", t["url"].as_str().unwrap_or("?"), t["last_status"].as_str().unwrap_or("?"));
    }
    if let Some(a) = s["alerting"].as_object() {
        let _ = writeln!(out, "alerting    instances={} silences={} engine={}", a["instances"].as_array().map_or(0, Vec::len), a["silences"].as_array().map_or(0, Vec::len), compact(&a["engine"]));
    }
    out
}

fn compact(v: &Value) -> String {
    match v.as_object() {
        Some(o) => o.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "),
        None => v.to_string(),
    }
}
