//! Each subcommand against a live service, checked by output and exit code.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::process::Stdio;
use std::time::Duration;

use common::{run, stderr, stdout, Server};
use serde_json::{json, Value};

fn now_ms() -> u64 {
    chrono::Utc::now().timestamp_millis() as u64
}

fn write_json(dir: &std::path::Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn registration() -> Value {
    json!({
        "producer": "ops",
        "doc_type": "ticket",
        "schema": {"producer": "ops", "doc_type": "ticket", "fields": [{"name": "state", "type": "string", "required": true}]},
        "daily_quota_bytes": 1_000_000
    })
}

#[test]
fn query_ts_renders_series() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), &[]);
    assert_eq!(common::push(&srv.url, "probe", "up{instance=\"a\"} 1\nup{instance=\"b\"} 0\n"), 200);

    let o = srv.run(&["query", "ts", "up", "--last", "1h"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("SERIES"), "{out}");
    assert!(out.contains("up{instance=\"a\",job=\"probe\"}"), "{out}");

    let o = srv.run(&["query", "ts", "up", "--last", "1h", "--format", "sparkline"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(stdout(&o).contains('▁'));

    let o = srv.run(&["query", "ts", "sum by (job) up", "-o", "json"]);
    let m: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m[0]["tags"]["job"], "probe");
    assert_eq!(m[0]["samples"][0][1], 1.0);
}

#[test]
fn query_errors_map_to_exit_codes() {
    let o = run(&["query", "ts", "rate(up[5m]", "--url", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("position"), "{}", stderr(&o));
    assert!(stderr(&o).contains('^'));

    let o = run(&["query", "ts", "up", "--url", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(&["status", "--url", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(&["query", "docs", "site", "--type", "x", "--url", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["status", "--url", "not a url"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inject_reports_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(&dir.path().join("data"), &[]);
    let reg = write_json(dir.path(), "reg.json", &registration());
    let o = srv.run(&["register", &reg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let t = now_ms();
    let docs: Vec<Value> = (0..5).map(|i| json!({"timestamp": t + i, "payload": {"state": "open", "n": i}})).collect();
    let good = write_json(dir.path(), "good.json", &json!(docs));
    let o = srv.run(&["inject", "-p", "ops", "-t", "ticket", &good]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "5 accepted");

    let mut docs = docs;
    docs[2]["payload"]["version"] = json!(3);
    let bad = write_json(dir.path(), "bad.json", &json!(docs));
    let o = srv.run(&["inject", "-p", "ops", "-t", "ticket", &bad]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("4 accepted, 1 rejected (RESERVED_FIELD)"));
    assert!(out.contains("doc 2: RESERVED_FIELD"), "{out}");

    let o = srv.run(&["inject", "-p", "ops", "-t", "ticket", &bad, "-o", "json"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["accepted"].as_u64(), v["rejected"].as_u64()), (Some(4), Some(1)));

    let o = srv.run(&["inject", "-p", "ops", "-t", "ticket", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    // the documents become searchable
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    loop {
        let o = srv.run(&["query", "docs", "state=open n>1", "--type", "ticket", "-o", "json"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let hits: Value = serde_json::from_str(&stdout(&o)).unwrap();
        // the second batch repeats the first one's content and is deduplicated
        if hits.as_array().unwrap().len() == 3 {
            break;
        }
        assert!(std::time::Instant::now() < deadline, "{hits}");
        std::thread::sleep(Duration::from_millis(100));
    }
    let o = srv.run(&["query", "docs", "state=open", "--type", "ticket"]);
    assert!(stdout(&o).starts_with("TIMESTAMP"), "{}", stdout(&o));
}

fn spawn_sub(srv: &Server, args: &[&str]) -> (std::process::Child, BufReader<std::process::ChildStdout>) {
    let mut child = srv.cmd(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    assert!(line.starts_with("subscribed"), "{line}");
    let out = BufReader::new(child.stdout.take().unwrap());
    (child, out)
}

#[test]
fn pub_and_sub_over_the_proxy() {
    let dir = tempfile::tempdir().unwrap();
    let tokens = dir.path().join("tokens.toml");
    std::fs::write(&tokens, "[[tokens]]\ntoken = \"ops\"\npublish = [\"cms.>\"]\nsubscribe = [\"cms.>\"]\n\n[[tokens]]\ntoken = \"reader\"\nsubscribe = [\"cms.>\"]\n").unwrap();
    let srv = Server::start(&dir.path().join("data"), &["--tokens", tokens.to_str().unwrap()]);

    let (mut sub, mut out) = spawn_sub(&srv, &["sub", "cms.>", "--count", "2", "--timeout", "20s", "--token", "ops"]);
    let o = srv.run(&["pub", "cms.a", "hi", "--token", "ops"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    assert_eq!(line, "hi\n");

    let mut p = srv.cmd(&["pub", "cms.b.c", "--token", "ops"]).stdin(Stdio::piped()).spawn().unwrap();
    p.stdin.take().unwrap().write_all(b"from stdin").unwrap();
    assert!(p.wait().unwrap().success());
    line.clear();
    out.read_line(&mut line).unwrap();
    assert_eq!(line, "from stdin\n");
    assert_eq!(sub.wait().unwrap().code(), Some(0), "exits after --count messages");

    let o = srv.run(&["pub", "cms.a", "hi", "--token", "reader"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("-ERR"), "{}", stderr(&o));
    let o = srv.run(&["sub", "cms.>", "--token", "nobody"]);
    assert_eq!(o.status.code(), Some(4));
    let o = srv.run(&["sub", ">", "--token", "reader"]);
    assert_eq!(o.status.code(), Some(4));
    let o = run(&["pub", "cms.a", "x", "--pubsub", "127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn spider_sim_is_deterministic_and_injects() {
    let dry = |seed: &str| run(&["spider-sim", "--seed", seed, "--ticks", "2", "--jobs-per-tick", "10", "--start", "1760000000000", "--dry-run"]);
    let (a, b) = (dry("42"), dry("42"));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a).lines().count(), 20);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(dry("43").stdout, a.stdout);

    let o = run(&["spider-sim", "--failure-rate", "2", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), &[]);
    let (mut sub, mut out) = spawn_sub(&srv, &["sub", "cms.jobs.*", "--count", "1", "--timeout", "30s"]);
    let o = srv.run(&["spider-sim", "--ticks", "3", "--jobs-per-tick", "10", "--time-scale", "7200", "--failure-rate", "0.5", "-o", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["documents"], 30);
    assert_eq!(summary["accepted"], 30);
    assert!(summary["exit_messages"].as_u64().unwrap() > 0, "{summary}");
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let exit: Value = serde_json::from_str(&line).unwrap();
    assert!(exit["job_id"].as_str().unwrap().starts_with("sim42-"));
    assert_eq!(sub.wait().unwrap().code(), Some(0));

    let o = srv.run(&["status", "-o", "json"]);
    let s: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["ingest"]["accepted"], 30);
    let o = srv.run(&["status"]);
    assert!(stdout(&o).contains("ingest      accepted=30"), "{}", stdout(&o));
}

#[test]
fn config_file_and_environment_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(&dir.path().join("data"), &[]);
    let cfg = dir.path().join("cli.toml");
    std::fs::write(&cfg, format!("url = \"{}\"\nformat = \"json\"\n", srv.url)).unwrap();

    // file only
    let o = common::minimon(&["status", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(serde_json::from_str::<Value>(&stdout(&o)).is_ok());
    // environment beats the file
    let o = common::minimon(&["status", "--config", cfg.to_str().unwrap()]).env("MINIMON_URL", "http://127.0.0.1:1").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    // a flag beats the environment
    let o = common::minimon(&["status", "--config", cfg.to_str().unwrap(), "--url", &srv.url]).env("MINIMON_URL", "http://127.0.0.1:1").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    // a named config file that is missing
    let o = common::minimon(&["status", "--config", dir.path().join("nope.toml").to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}
