//! Subcommand definitions and their implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minimon_core::{format_duration, parse_duration, Clock, SharedClock, SystemClock, Timestamp};
use minimon_pubsub::{Client, ClientError, Event};
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::config::{self, CliConfig, FileConfig, Format, Overrides};
use crate::docquery::parse_filter;
use crate::render::{self, Series};
use crate::sim::{self, JobSimSpec, Simulator};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "minimon", version, about = "Operator tools for the minimon monitoring pipeline")]
pub struct Cli {
    /// Client config file (TOML with url, pubsub, token, format)
    /// [env: MINIMON_CONFIG] [default: ~/.config/minimon/config.toml]
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Service base URL [env: MINIMON_URL] [default: http://127.0.0.1:9400]
    #[arg(long, global = true)]
    pub url: Option<String>,
    /// Pub/sub proxy address [env: MINIMON_PUBSUB] [default: 127.0.0.1:4222]
    #[arg(long, global = true)]
    pub pubsub: Option<String>,
    /// Pub/sub token [env: MINIMON_TOKEN] [default: minimon]
    #[arg(long, global = true)]
    pub token: Option<String>,
    /// Output format [default: table]
    #[arg(long, short = 'o', global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the document store or the time-series store
    Query(QueryArgs),
    /// Inject a JSON array of documents from a file
    Inject(InjectArgs),
    /// Register (or replace) a producer from a JSON registration file
    Register {
        file: PathBuf,
    },
    /// Publish one message on a subject
    Pub {
        subject: String,
        /// Message body; read from stdin when omitted
        payload: Option<String>,
    },
    /// Print messages matching a subject pattern, one per line
    Sub {
        pattern: String,
        /// Exit after this many messages
        #[arg(long)]
        count: Option<u64>,
        /// Give up (exit 1) if the count is not reached in this time, e.g. 30s
        #[arg(long)]
        timeout: Option<String>,
    },
    /// Run the synthetic batch-job producer
    SpiderSim(SimArgs),
    /// Show service status
    Status,
    /// Run the monitoring service
    Serve(ServeArgs),
    #[command(hide = true)]
    BusConsume(BusConsumeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Docs,
    Ts,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub target: Target,
    /// ts: query expression. docs: filter clauses such as
    /// `site=T2_A status!=failed cpu_hours>2 note?`, or a JSON query object
    pub text: String,
    /// Range ending now, e.g. 1h
    #[arg(long, conflicts_with = "from")]
    pub last: Option<String>,
    /// Range start, RFC3339 or epoch milliseconds
    #[arg(long)]
    pub from: Option<String>,
    /// Range end, RFC3339 or epoch milliseconds [default: now]
    #[arg(long)]
    pub to: Option<String>,
    /// ts: evaluation step [default: range/120, at least 1s]
    #[arg(long)]
    pub step: Option<String>,
    /// docs: document type
    #[arg(long = "type", short = 't')]
    pub doc_type: Option<String>,
    /// docs: maximum documents returned
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long, short = 'p')]
    pub producer: String,
    #[arg(long = "type", short = 't')]
    pub doc_type: String,
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub jobs_per_tick: usize,
    /// Ticks to run; 0 runs until interrupted
    #[arg(long, default_value_t = 0)]
    pub ticks: u64,
    /// Simulated time between ticks
    #[arg(long, default_value = "12m")]
    pub tick_interval: String,
    /// Simulated time per wall-clock time; 720 makes a 12m tick last 1s
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub failure_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub retry_max: u32,
    /// Comma-separated site names
    #[arg(long, value_delimiter = ',')]
    pub sites: Option<Vec<String>>,
    /// Timestamp of the first tick, RFC3339 or epoch milliseconds [default: now]
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long, default_value = sim::DEFAULT_PRODUCER)]
    pub producer: String,
    /// Skip registering the producer
    #[arg(long)]
    pub no_register: bool,
    /// Skip publishing job exit messages
    #[arg(long)]
    pub no_pubsub: bool,
    /// Print documents as JSON lines instead of injecting them
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "./minimon-data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:9400")]
    pub http: SocketAddr,
    /// Pub/sub proxy listen address
    #[arg(long = "listen-pubsub", default_value = config::DEFAULT_PUBSUB)]
    pub listen_pubsub: SocketAddr,
    /// Run without the pub/sub proxy
    #[arg(long)]
    pub no_pubsub: bool,
    /// Token table file for the proxy; without it one token gets full access
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Alerting configuration file
    #[arg(long)]
    pub alerting: Option<PathBuf>,
    /// Scrape targets file
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, default_value = "60s")]
    pub maintenance_interval: String,
    #[arg(long, default_value = "30s")]
    pub checkpoint_interval: String,
}

#[derive(Debug, Args)]
pub struct BusConsumeArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, required = true)]
    pub group: Vec<String>,
    #[arg(long)]
    pub topic: String,
    /// Observation log: `start <group> <committed>` then `<group> <offset>`
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Sleep between batches, in milliseconds
    #[arg(long, default_value_t = 0)]
    pub pause_ms: u64,
    /// Exit once every group has caught up
    #[arg(long)]
    pub until_idle: bool,
}

impl Cli {
    pub fn client_config(&self) -> Result<CliConfig, CliError> {
        let file = match (&self.config, std::env::var_os(config::ENV_CONFIG)) {
            (Some(p), _) => FileConfig::load(p, true)?,
            (None, Some(p)) => FileConfig::load(&PathBuf::from(p), true)?,
            (None, None) => match config::default_path() {
                Some(p) => FileConfig::load(&p, false)?,
                None => FileConfig::default(),
            },
        };
        let flags = Overrides { url: self.url.clone(), pubsub: self.pubsub.clone(), token: self.token.clone(), format: self.format };
        CliConfig::resolve(flags, |k| std::env::var(k).ok().filter(|v| !v.is_empty()), file)
    }
}

fn now() -> Timestamp {
    SystemClock.now()
}

pub fn parse_time(flag: &str, text: &str) -> Result<Timestamp, CliError> {
    if let Ok(ms) = text.parse::<u64>() {
        return Ok(Timestamp::from_millis(ms));
    }
    Timestamp::parse_rfc3339(text).map_err(|e| CliError::usage(format!("--{flag}: {e}")))
}

fn duration_arg(flag: &str, text: &str) -> Result<Duration, CliError> {
    parse_duration(text).map_err(|e| CliError::usage(format!("--{flag}: {e}")))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("values serialize"));
}

/// Caret line pointing at a byte offset of `text`.
pub fn annotate(text: &str, pos: usize, message: &str) -> String {
    let col = text.get(..pos.min(text.len())).map_or(pos, |p| p.chars().count());
    format!("parse error at position {pos}: {message}\n  {text}\n  {}^", " ".repeat(col))
}

struct Http {
    config: CliConfig,
    client: reqwest::Client,
}

enum Reply {
    Ok(Value),
    Status(StatusCode, Value),
}

impl Http {
    fn new(config: CliConfig) -> Self {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(60)).build().expect("http client");
        Http { config, client }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<Reply, CliError> {
        let resp = req.send().await.map_err(|e| {
            if e.is_connect() || e.is_timeout() {
                CliError::unreachable(format!("service unreachable at {}: {e}", self.config.url))
            } else {
                CliError::rejected(format!("request failed: {e}"))
            }
        })?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| CliError::unreachable(format!("reading response: {e}")))?;
        let value = serde_json::from_slice(&body).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&body).into_owned()));
        Ok(if status.is_success() { Reply::Ok(value) } else { Reply::Status(status, value) })
    }

    async fn get(&self, path: &str, query: &[(&str, String)]) -> Result<Reply, CliError> {
        self.send(self.client.get(self.config.endpoint(path)).query(query)).await
    }

    fn fail(status: StatusCode, body: &Value) -> CliError {
        let message = body["error"].as_str().map(str::to_string).unwrap_or_else(|| body.to_string());
        CliError::rejected(format!("service returned {status}: {message}"))
    }
}

pub async fn query(config: CliConfig, args: QueryArgs) -> Result<(), CliError> {
    let to = match &args.to {
        Some(t) => parse_time("to", t)?,
        None => now(),
    };
    let from = match (&args.from, &args.last) {
        (Some(f), _) => parse_time("from", f)?,
        (None, Some(l)) => to.saturating_sub(duration_arg("last", l)?),
        (None, None) => match args.target {
            Target::Ts => to,
            Target::Docs => to.saturating_sub(Duration::from_secs(24 * 3600)),
        },
    };
    if from > to {
        return Err(CliError::usage(format!("range start {from} is after end {to}")));
    }
    let format = config.format;
    let http = Http::new(config);
    match args.target {
        Target::Ts => query_ts(&http, format, &args, from, to).await,
        Target::Docs => query_docs(&http, format, &args, from, to).await,
    }
}

async fn query_ts(http: &Http, format: Format, args: &QueryArgs, from: Timestamp, to: Timestamp) -> Result<(), CliError> {
    if let Err(e) = minimon_tsdb::parse_query(&args.text) {
        return Err(CliError::usage(annotate(&args.text, e.pos, &e.message)));
    }
    let step = match &args.step {
        Some(s) => duration_arg("step", s)?,
        None => Duration::from_millis(((to.as_millis() - from.as_millis()) / 120).max(1000)),
    };
    let params = [("q", args.text.clone()), ("from", from.as_millis().to_string()), ("to", to.as_millis().to_string()), ("step", format_duration(step))];
    let matrix = match http.get("api/v1/ts/query", &params).await? {
        Reply::Ok(v) => v,
        Reply::Status(StatusCode::BAD_REQUEST, body) if body["position"].is_u64() => {
            let pos = body["position"].as_u64().unwrap_or(0) as usize;
            return Err(CliError::usage(annotate(&args.text, pos, body["error"].as_str().unwrap_or("invalid query"))));
        }
        Reply::Status(StatusCode::BAD_REQUEST, body) => return Err(CliError::usage(body["error"].as_str().unwrap_or("invalid query").to_string())),
        Reply::Status(s, body) => return Err(Http::fail(s, &body)),
    };
    if format == Format::Json {
        print_json(&matrix);
        return Ok(());
    }
    let series: Vec<Series> = serde_json::from_value(matrix).map_err(|e| CliError::rejected(format!("unexpected response: {e}")))?;
    if series.is_empty() {
        eprintln!("no series matched");
    }
    print!("{}", if format == Format::Sparkline { render::matrix_sparklines(&series) } else { render::matrix_table(&series) });
    Ok(())
}

async fn query_docs(http: &Http, format: Format, args: &QueryArgs, from: Timestamp, to: Timestamp) -> Result<(), CliError> {
    let query = if args.text.trim_start().starts_with('{') {
        let mut q: Value = serde_json::from_str(&args.text).map_err(|e| CliError::usage(format!("query is not valid JSON: {e}")))?;
        let obj = q.as_object_mut().ok_or_else(|| CliError::usage("query must be a JSON object"))?;
        if let Some(t) = &args.doc_type {
            obj.insert("type".into(), json!(t));
        }
        obj.entry("from").or_insert(json!(from));
        obj.entry("to").or_insert(json!(to));
        obj.entry("limit").or_insert(json!(args.limit));
        q
    } else {
        let matchers = parse_filter(&args.text).map_err(|e| CliError::usage(annotate(&args.text, e.pos, &e.message)))?;
        let doc_type = args.doc_type.as_ref().ok_or_else(|| CliError::usage("--type is required for document queries"))?;
        json!({"type": doc_type, "matchers": matchers, "from": from, "to": to, "limit": args.limit})
    };
    let docs = match http.get("api/v1/docs/search", &[("q", query.to_string())]).await? {
        Reply::Ok(v) => v,
        Reply::Status(StatusCode::BAD_REQUEST, body) => return Err(CliError::usage(body["error"].as_str().unwrap_or("invalid query").to_string())),
        Reply::Status(s, body) => return Err(Http::fail(s, &body)),
    };
    if format == Format::Json {
        print_json(&docs);
    } else {
        print!("{}", render::docs_table(docs.as_array().map(Vec::as_slice).unwrap_or_default()));
    }
    Ok(())
}

fn read_input(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(format!("{}: file not found", path.display())),
        _ => CliError::missing(format!("{}: {e}", path.display())),
    })
}

/// `"4 accepted, 1 rejected (RESERVED_FIELD)"`; reasons in order of first
/// appearance.
pub fn inject_summary(results: &[Value]) -> String {
    let accepted = results.iter().filter(|r| r["status"] == "ok").count();
    let rejected: Vec<&Value> = results.iter().filter(|r| r["status"] != "ok").collect();
    if rejected.is_empty() {
        return format!("{accepted} accepted");
    }
    let mut seen = BTreeSet::new();
    let reasons: Vec<&str> = rejected.iter().filter_map(|r| r["reason"].as_str()).filter(|r| seen.insert(*r)).collect();
    format!("{accepted} accepted, {} rejected ({})", rejected.len(), reasons.join(", "))
}

async fn post_docs(http: &Http, producer: &str, doc_type: &str, docs: &[Value]) -> Result<Vec<Value>, CliError> {
    let req = http.client.post(http.config.endpoint("api/v1/inject")).query(&[("producer", producer), ("type", doc_type)]).json(docs);
    match http.send(req).await? {
        Reply::Ok(Value::Array(results)) => Ok(results),
        Reply::Ok(other) => Err(CliError::rejected(format!("unexpected response: {other}"))),
        Reply::Status(StatusCode::BAD_REQUEST, body) => Err(CliError::usage(body["error"].as_str().unwrap_or("bad request").to_string())),
        Reply::Status(s, body) => Err(Http::fail(s, &body)),
    }
}

pub async fn inject(config: CliConfig, args: InjectArgs) -> Result<(), CliError> {
    let text = read_input(&args.file)?;
    let docs: Vec<Value> = match serde_json::from_str(&text) {
        Ok(Value::Array(d)) => d,
        Ok(_) => return Err(CliError::usage(format!("{}: expected a JSON array of documents", args.file.display()))),
        Err(e) => return Err(CliError::usage(format!("{}: {e}", args.file.display()))),
    };
    let format = config.format;
    let http = Http::new(config);
    let results = post_docs(&http, &args.producer, &args.doc_type, &docs).await?;
    let rejected: Vec<&Value> = results.iter().filter(|r| r["status"] != "ok").collect();
    if format == Format::Json {
        print_json(&json!({"accepted": results.len() - rejected.len(), "rejected": rejected.len(), "results": results}));
    } else {
        println!("{}", inject_summary(&results));
        for r in rejected.iter().take(10) {
            println!("  doc {}: {}: {}", r["doc_index"], r["reason"].as_str().unwrap_or("?"), r["detail"].as_str().unwrap_or(""));
        }
    }
    if rejected.is_empty() {
        Ok(())
    } else {
        Err(CliError::rejected(String::new()))
    }
}

async fn put_registration(http: &Http, reg: &Value) -> Result<(), CliError> {
    let req = http.client.put(http.config.endpoint("api/v1/producers")).json(reg);
    match http.send(req).await? {
        Reply::Ok(_) => Ok(()),
        Reply::Status(StatusCode::BAD_REQUEST, body) => Err(CliError::rejected(format!("registration refused ({}): {}", body["reason"].as_str().unwrap_or("MALFORMED"), body["error"].as_str().unwrap_or("")))),
        Reply::Status(s, body) => Err(Http::fail(s, &body)),
    }
}

pub async fn register(config: CliConfig, file: PathBuf) -> Result<(), CliError> {
    let text = read_input(&file)?;
    let reg: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", file.display())))?;
    let format = config.format;
    put_registration(&Http::new(config), &reg).await?;
    if format == Format::Json {
        print_json(&json!({"registered": {"producer": reg["producer"], "type": reg["doc_type"]}}));
    } else {
        println!("registered {}/{}", reg["producer"].as_str().unwrap_or("?"), reg["doc_type"].as_str().unwrap_or("?"));
    }
    Ok(())
}

async fn resolve_addr(addr: &str) -> Result<SocketAddr, CliError> {
    tokio::net::lookup_host(addr)
        .await
        .map_err(|e| CliError::usage(format!("invalid pub/sub address {addr:?}: {e}")))?
        .next()
        .ok_or_else(|| CliError::usage(format!("pub/sub address {addr:?} resolves to nothing")))
}

fn pubsub_error(addr: &str, e: ClientError) -> CliError {
    match e {
        ClientError::Server(msg) if ["authentication", "authorization", "permission denied"].iter().any(|k| msg.contains(k)) => CliError::auth(format!("-ERR {msg}")),
        ClientError::Server(msg) => CliError::rejected(format!("-ERR {msg}")),
        ClientError::Io(e) => CliError::unreachable(format!("pub/sub proxy unreachable at {addr}: {e}")),
        ClientError::Closed => CliError::unreachable(format!("pub/sub proxy at {addr} closed the connection")),
        e @ ClientError::Protocol(_) => CliError::rejected(e.to_string()),
    }
}

async fn connect(config: &CliConfig) -> Result<Client, CliError> {
    let addr = resolve_addr(&config.pubsub).await?;
    Client::connect(addr, &config.token).await.map_err(|e| pubsub_error(&config.pubsub, e))
}

pub async fn publish(config: CliConfig, subject: String, payload: Option<String>) -> Result<(), CliError> {
    let body = match payload {
        Some(p) => p.into_bytes(),
        None => {
            let mut buf = Vec::new();
            std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).map_err(|e| CliError::usage(format!("reading stdin: {e}")))?;
            buf
        }
    };
    let mut client = connect(&config).await?;
    client.publish(&subject, &body).await.map_err(|e| pubsub_error(&config.pubsub, e))?;
    if config.format == Format::Json {
        print_json(&json!({"subject": subject, "bytes": body.len()}));
    }
    Ok(())
}

pub async fn subscribe(config: CliConfig, pattern: String, count: Option<u64>, timeout: Option<String>) -> Result<(), CliError> {
    let deadline = timeout.map(|t| duration_arg("timeout", &t)).transpose()?.map(|d| tokio::time::Instant::now() + d);
    let mut client = connect(&config).await?;
    client.subscribe(&pattern, "1").await.map_err(|e| pubsub_error(&config.pubsub, e))?;
    eprintln!("subscribed to {pattern}");
    let mut received = 0u64;
    let mut out = std::io::stdout().lock();
    while count.is_none_or(|c| received < c) {
        let next = async {
            match deadline {
                Some(d) => tokio::time::timeout_at(d, client.next_event()).await.ok(),
                None => Some(client.next_event().await),
            }
        };
        let event = tokio::select! {
            e = next => e,
            _ = tokio::signal::ctrl_c() => return Ok(()),
        };
        let Some(event) = event else {
            return Err(CliError::rejected(format!("timed out after {received} messages")));
        };
        match event.map_err(|e| pubsub_error(&config.pubsub, e))? {
            Event::Msg(m) => {
                received += 1;
                let payload = String::from_utf8_lossy(&m.payload);
                let line = match config.format {
                    Format::Json => json!({"subject": m.subject, "payload": payload}).to_string(),
                    _ => payload.into_owned(),
                };
                let _ = writeln!(out, "{line}");
                let _ = out.flush();
            }
            Event::Notice(n) => return Err(CliError::rejected(format!("-ERR {n}"))),
        }
    }
    Ok(())
}

pub async fn status(config: CliConfig) -> Result<(), CliError> {
    let format = config.format;
    let http = Http::new(config);
    let s = match http.get("api/v1/status", &[]).await? {
        Reply::Ok(v) => v,
        Reply::Status(code, body) => return Err(Http::fail(code, &body)),
    };
    if format == Format::Json {
        print_json(&s);
    } else {
        print!("{}", render::status_text(&s));
    }
    Ok(())
}

#[derive(Debug, Default, serde::Serialize)]
pub struct SimSummary {
    pub ticks: u64,
    pub documents: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub failed_batches: u64,
    pub exit_messages: u64,
}

pub async fn spider_sim(config: CliConfig, args: SimArgs) -> Result<(), CliError> {
    let start = match &args.start {
        Some(s) => parse_time("start", s)?,
        None => now(),
    };
    let mut spec = JobSimSpec::new(args.seed, start);
    spec.jobs_per_tick = args.jobs_per_tick;
    spec.tick_interval = duration_arg("tick-interval", &args.tick_interval)?;
    spec.time_scale = args.time_scale;
    spec.failure_rate = args.failure_rate;
    spec.retry_max = args.retry_max;
    if let Some(sites) = args.sites.clone() {
        spec.sites = sites;
    }
    let mut sim = Simulator::new(spec).map_err(CliError::usage)?;
    let wall = sim.spec().wall_interval();
    let format = config.format;

    if args.dry_run {
        let mut out = std::io::stdout().lock();
        for _ in 0..args.ticks.max(1) {
            for d in sim.next_tick().docs {
                let _ = writeln!(out, "{d}");
            }
        }
        return Ok(());
    }

    let http = Http::new(config.clone());
    if !args.no_register {
        put_registration(&http, &sim::registration(&args.producer)).await?;
    }
    let mut bus = None;
    if !args.no_pubsub {
        match connect(&config).await {
            Ok(c) => bus = Some(c),
            Err(e) => eprintln!("spider-sim: not publishing exit messages: {e}"),
        }
    }

    let mut summary = SimSummary::default();
    let began = tokio::time::Instant::now();
    loop {
        if args.ticks > 0 && summary.ticks == args.ticks {
            break;
        }
        let due = began + wall.mul_f64(summary.ticks as f64);
        tokio::select! {
            _ = tokio::time::sleep_until(due) => {}
            _ = tokio::signal::ctrl_c() => break,
        }
        let tick = sim.next_tick();
        summary.ticks += 1;
        summary.documents += tick.docs.len() as u64;
        match post_docs(&http, &args.producer, sim::DOC_TYPE, &tick.docs).await {
            Ok(results) => {
                for r in &results {
                    if r["status"] == "ok" {
                        summary.accepted += 1;
                    } else {
                        summary.rejected += 1;
                        eprintln!("spider-sim: tick {} doc {} rejected: {} {}", tick.index, r["doc_index"], r["reason"].as_str().unwrap_or("?"), r["detail"].as_str().unwrap_or(""));
                    }
                }
            }
            Err(e) => {
                summary.failed_batches += 1;
                eprintln!("spider-sim: tick {} not injected: {e}", tick.index);
            }
        }
        if let Some(client) = bus.as_mut() {
            for exit in &tick.exits {
                match client.publish(&exit.subject, exit.payload.to_string().as_bytes()).await {
                    Ok(()) => summary.exit_messages += 1,
                    Err(e) => {
                        eprintln!("spider-sim: stopped publishing exit messages: {e}");
                        bus = None;
                        break;
                    }
                }
            }
        }
    }
    if format == Format::Json {
        print_json(&summary);
    } else {
        println!(
            "spider-sim: {} ticks, {} documents, {} accepted, {} rejected, {} failed batches, {} exit messages",
            summary.ticks, summary.documents, summary.accepted, summary.rejected, summary.failed_batches, summary.exit_messages
        );
    }
    if summary.ticks > 0 && summary.failed_batches == summary.ticks {
        return Err(CliError::unreachable("no batch could be injected"));
    }
    Ok(())
}

pub async fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut cfg = minimon_server::ServiceConfig::new(&args.data_dir);
    cfg.http_addr = args.http;
    cfg.pubsub_addr = (!args.no_pubsub).then_some(args.listen_pubsub);
    cfg.pubsub_tokens = args.tokens;
    cfg.alerting_config = args.alerting;
    cfg.scrape_targets = args.targets;
    cfg.maintenance_interval = duration_arg("maintenance-interval", &args.maintenance_interval)?;
    cfg.checkpoint_interval = duration_arg("checkpoint-interval", &args.checkpoint_interval)?;
    let clock: SharedClock = Arc::new(SystemClock);
    let running = minimon_server::start(cfg, clock).await.map_err(|e| CliError::rejected(format!("cannot start: {e}")))?;
    match running.pubsub_addr {
        Some(p) => eprintln!("minimon listening http={} pubsub={p}", running.http_addr),
        None => eprintln!("minimon listening http={}", running.http_addr),
    }
    shutdown_signal().await;
    eprintln!("minimon shutting down");
    running.shutdown().await.map_err(|e| CliError::rejected(format!("shutdown: {e}")))
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

/// Consumes one topic for several groups, logging every delivery before
/// committing it.
pub fn bus_consume(args: BusConsumeArgs) -> Result<(), CliError> {
    let clock: SharedClock = Arc::new(SystemClock);
    let bus = minimon_bus::Bus::open(&args.dir, minimon_bus::BusConfig::default(), clock).map_err(|e| CliError::rejected(e.to_string()))?;
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&args.log).map_err(|e| CliError::missing(format!("{}: {e}", args.log.display())))?;
    let fail = |e: &dyn std::fmt::Display| CliError::rejected(e.to_string());
    for g in &args.group {
        writeln!(log, "start {g} {}", bus.committed(g, &args.topic)).map_err(|e| fail(&e))?;
    }
    loop {
        let mut idle = true;
        for g in &args.group {
            let records = bus.poll(g, &args.topic, args.batch).map_err(|e| fail(&e))?;
            let Some(last) = records.last() else { continue };
            idle = false;
            let lines: String = records.iter().map(|r| format!("{g} {}\n", r.offset)).collect();
            log.write_all(lines.as_bytes()).map_err(|e| fail(&e))?;
            bus.commit(g, &args.topic, last.offset as i64).map_err(|e| fail(&e))?;
        }
        if idle && args.until_idle {
            return Ok(());
        }
        if args.pause_ms > 0 || idle {
            std::thread::sleep(Duration::from_millis(args.pause_ms.max(if idle { 5 } else { 0 })));
        }
    }
}
