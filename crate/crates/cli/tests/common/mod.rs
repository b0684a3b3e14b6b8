//! Helpers for driving the `minimon` binary as a subprocess.

#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_minimon")
}

/// A command with the client environment cleared so ambient settings do
/// not leak into assertions.
pub fn minimon(args: &[&str]) -> Command {
    let mut c = Command::new(bin());
    c.args(args);
    for k in ["MINIMON_URL", "MINIMON_PUBSUB", "MINIMON_TOKEN", "MINIMON_CONFIG"] {
        c.env_remove(k);
    }
    c.env("HOME", std::env::temp_dir().join("minimon-test-home-unused"));
    c
}

pub fn run(args: &[&str]) -> Output {
    minimon(args).output().expect("run minimon")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A `minimon serve` child on ephemeral ports.
pub struct Server {
    child: Child,
    pub url: String,
    pub pubsub: String,
    pub data_dir: PathBuf,
}

impl Server {
    pub fn start(data_dir: &Path, extra: &[&str]) -> Server {
        let mut args = vec!["serve", "--data-dir", data_dir.to_str().unwrap(), "--http", "127.0.0.1:0", "--listen-pubsub", "127.0.0.1:0", "--checkpoint-interval", "1s"];
        args.extend_from_slice(extra);
        let mut child = minimon(&args).env("RUST_LOG", "warn").stderr(Stdio::piped()).stdout(Stdio::null()).spawn().expect("spawn minimon serve");
        let stderr = child.stderr.take().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut tx = Some(tx);
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                if line.starts_with("minimon listening") {
                    if let Some(tx) = tx.take() {
                        let _ = tx.send(line);
                    }
                } else if std::env::var_os("MINIMON_TEST_VERBOSE").is_some() {
                    eprintln!("[serve] {line}");
                }
            }
        });
        let line = rx.recv_timeout(Duration::from_secs(30)).expect("service announces its addresses");
        let field = |name: &str| line.split_whitespace().find_map(|w| w.strip_prefix(&format!("{name}="))).map(str::to_string);
        Server { child, url: format!("http://{}", field("http").unwrap()), pubsub: field("pubsub").unwrap_or_default(), data_dir: data_dir.to_path_buf() }
    }

    /// Client command pointed at this server.
    pub fn cmd(&self, args: &[&str]) -> Command {
        let mut c = minimon(args);
        c.env("MINIMON_URL", &self.url).env("MINIMON_PUBSUB", &self.pubsub);
        c
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().expect("run minimon")
    }

    /// SIGTERM, then wait for the clean shutdown.
    pub fn stop(mut self) {
        let _ = Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(f)
}

/// Pushes exposition text for `job`; returns the HTTP status.
pub fn push(url: &str, job: &str, body: &str) -> u16 {
    block_on(async { reqwest::Client::new().post(format!("{url}/metrics/job/{job}")).body(body.to_string()).send().await.unwrap().status().as_u16() })
}

pub fn get_json(url: &str, path: &str, query: &[(&str, String)]) -> serde_json::Value {
    block_on(async { reqwest::Client::new().get(format!("{url}{path}")).query(query).send().await.unwrap().json().await.unwrap() })
}
