//! HTTP API. Every response body is JSON; errors are `{"error": ...}`
//! with a 4xx status for caller mistakes and 5xx for storage failures.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use minimon_alerting::{AlertInstance, Silence, SilenceSpec};
use minimon_core::{parse_duration, FieldMatcher, Timestamp};
use minimon_docstore::{DocQuery, DocStoreError};
use minimon_ingest::{ProducerRegistration, RegistryError};
use minimon_tsdb::QueryError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{Service, Sink};

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError { status, body: json!({ "error": message.to_string() }) }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/inject", post(inject))
        .route("/api/v1/producers", put(register_producer).get(list_producers))
        .route("/metrics/job/{job}", post(push_metrics))
        .route("/api/v1/targets", get(targets))
        .route("/api/v1/docs/search", get(docs_search).post(docs_search))
        .route("/api/v1/docs/indexes", get(docs_indexes))
        .route("/api/v1/ts/query", get(ts_query))
        .route("/api/v1/ts/cardinality", get(ts_cardinality))
        .route("/api/v1/archive/partitions", get(archive_partitions))
        .route("/api/v1/archive/read", get(archive_read))
        .route("/api/v1/alerting/reload", post(alerting_reload))
        .route("/api/v1/silences", get(list_silences).post(add_silence))
        .route("/api/v1/silences/{id}", delete(delete_silence))
        .route("/api/v1/alerts", get(alerts))
        .route("/api/v1/status", get(status))
        .with_state(service)
}

/// Accepts RFC3339 or integer milliseconds since the epoch.
fn parse_time(name: &str, text: &str) -> Result<Timestamp, ApiError> {
    if let Ok(ms) = text.parse::<u64>() {
        return Ok(Timestamp::from_millis(ms));
    }
    Timestamp::parse_rfc3339(text).map_err(|e| ApiError::bad_request(format!("{name}: {e}")))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))
}

#[derive(Deserialize)]
struct InjectParams {
    producer: String,
    #[serde(rename = "type")]
    doc_type: String,
}

async fn inject(State(svc): State<Arc<Service>>, Query(p): Query<InjectParams>, body: Bytes) -> Response {
    let batch = match serde_json::from_slice::<Value>(&body) {
        Ok(Value::Array(docs)) => docs,
        Ok(_) => return ApiError::bad_request("body must be a JSON array of documents").into_response(),
        Err(e) => return ApiError::bad_request(format!("malformed JSON: {e}")).into_response(),
    };
    match svc.injector.inject(&p.producer, &p.doc_type, &batch, svc.now()) {
        Ok(results) => Json(results).into_response(),
        Err(e) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("bus: {e}")).into_response(),
    }
}

async fn register_producer(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let reg: ProducerRegistration = match parse_json(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match svc.injector.registry().register(reg.clone(), true) {
        Ok(()) => Json(json!({ "registered": { "producer": reg.producer, "type": reg.doc_type } })).into_response(),
        Err(RegistryError::Invalid(problem)) => (StatusCode::BAD_REQUEST, Json(json!({ "error": problem.detail, "reason": problem.reason }))).into_response(),
        Err(e) => ApiError::internal(e).into_response(),
    }
}

async fn list_producers(State(svc): State<Arc<Service>>) -> Json<Vec<ProducerRegistration>> {
    Json(svc.injector.registry().list().into_iter().map(|r| (*r).clone()).collect())
}

async fn push_metrics(State(svc): State<Arc<Service>>, Path(job): Path<String>, body: String) -> ApiResult<Value> {
    let n = svc.push.push(&job, &body, svc.now()).map_err(ApiError::bad_request)?;
    Ok(Json(json!({ "job": job, "points": n })))
}

async fn targets(State(svc): State<Arc<Service>>) -> Json<Value> {
    Json(json!(svc.scraper.as_ref().map(|s| s.targets()).unwrap_or_default()))
}

#[derive(Deserialize)]
struct SearchParams {
    q: Option<String>,
}

/// The query comes from `?q=<json>` or, failing that, the request body.
async fn docs_search(State(svc): State<Arc<Service>>, Query(p): Query<SearchParams>, body: Bytes) -> ApiResult<Value> {
    let query: DocQuery = match &p.q {
        Some(q) => parse_json(q.as_bytes())?,
        None if !body.is_empty() => parse_json(&body)?,
        None => return Err(ApiError::bad_request("missing query: pass ?q=<json> or a JSON body")),
    };
    match svc.pipeline.docstore.search(&query) {
        Ok(docs) => Ok(Json(json!(docs))),
        Err(e @ DocStoreError::InvalidQuery(_)) => Err(ApiError::bad_request(e)),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn docs_indexes(State(svc): State<Arc<Service>>) -> Json<Value> {
    Json(json!(svc.pipeline.docstore.indexes()))
}

#[derive(Deserialize)]
struct TsQueryParams {
    q: String,
    from: Option<String>,
    to: Option<String>,
    step: Option<String>,
}

async fn ts_query(State(svc): State<Arc<Service>>, Query(p): Query<TsQueryParams>) -> ApiResult<Value> {
    let to = match &p.to {
        Some(t) => parse_time("to", t)?,
        None => svc.now(),
    };
    let from = match &p.from {
        Some(f) => parse_time("from", f)?,
        None => to,
    };
    let step = match &p.step {
        Some(s) => parse_duration(s).map_err(|e| ApiError::bad_request(format!("step: {e}")))?,
        None => Duration::from_secs(60),
    };
    match svc.pipeline.tsdb.query(&p.q, from, to, step) {
        Ok(matrix) => Ok(Json(json!(matrix))),
        Err(QueryError::Parse(e)) => Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": e.message, "position": e.pos }),
        }),
        Err(QueryError::Eval(e)) => Err(ApiError::bad_request(e)),
    }
}

async fn ts_cardinality(State(svc): State<Arc<Service>>) -> Json<Value> {
    Json(json!(svc.pipeline.tsdb.cardinality()))
}

async fn archive_partitions(State(svc): State<Arc<Service>>) -> Json<Value> {
    Json(json!(svc.pipeline.archive.partitions()))
}

#[derive(Deserialize)]
struct ArchiveReadParams {
    #[serde(rename = "type")]
    doc_type: String,
    day: chrono::NaiveDate,
    /// JSON array of field matchers.
    matchers: Option<String>,
}

async fn archive_read(State(svc): State<Arc<Service>>, Query(p): Query<ArchiveReadParams>) -> ApiResult<Value> {
    let matchers: Vec<FieldMatcher> = match &p.matchers {
        Some(m) => parse_json(m.as_bytes())?,
        None => Vec::new(),
    };
    match svc.pipeline.archive.read(&p.doc_type, p.day, &matchers) {
        Ok(docs) => Ok(Json(json!(docs))),
        Err(e @ minimon_archive::ArchiveError::UnknownPartition { .. }) => Err(ApiError::new(StatusCode::NOT_FOUND, e)),
        Err(e) => Err(ApiError::internal(e)),
    }
}

fn alerting(svc: &Service) -> Result<&Arc<minimon_alerting::AlertService>, ApiError> {
    svc.alerting.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "alerting is not configured"))
}

async fn alerting_reload(State(svc): State<Arc<Service>>) -> ApiResult<Value> {
    alerting(&svc)?.reload().map_err(ApiError::bad_request)?;
    Ok(Json(json!({ "reloaded": true })))
}

async fn list_silences(State(svc): State<Arc<Service>>) -> ApiResult<Vec<Silence>> {
    Ok(Json(alerting(&svc)?.silences()))
}

async fn add_silence(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Value> {
    let spec: SilenceSpec = parse_json(&body)?;
    let id = alerting(&svc)?.add_silence(spec).map_err(|e| ApiError::bad_request(e.0))?;
    Ok(Json(json!({ "id": id })))
}

async fn delete_silence(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Value> {
    if alerting(&svc)?.delete_silence(&id) {
        Ok(Json(json!({ "deleted": id })))
    } else {
        Err(ApiError::new(StatusCode::NOT_FOUND, format!("no silence {id}")))
    }
}

async fn alerts(State(svc): State<Arc<Service>>) -> ApiResult<Vec<AlertInstance>> {
    Ok(Json(alerting(&svc)?.instances()))
}

#[derive(Serialize)]
struct TopicStatus {
    topic: String,
    base_offset: u64,
    next_offset: u64,
    /// Committed offset per consumer group.
    committed: BTreeMap<String, i64>,
}

#[derive(Serialize)]
struct SinkStatus {
    #[serde(flatten)]
    stats: crate::SinkStats,
    backlog: u64,
}

async fn status(State(svc): State<Arc<Service>>) -> Json<Value> {
    let p = &svc.pipeline;
    let now = svc.now();
    let mut topics: BTreeMap<String, TopicStatus> = p
        .bus
        .topics()
        .into_iter()
        .map(|t| {
            let s = TopicStatus { base_offset: p.bus.base_offset(&t), next_offset: p.bus.next_offset(&t), committed: BTreeMap::new(), topic: t.clone() };
            (t, s)
        })
        .collect();
    for c in p.bus.cursors() {
        if let Some(t) = topics.get_mut(&c.topic) {
            t.committed.insert(c.group, c.committed_offset);
        }
    }
    let doc_topics = p.doc_topics();
    let sinks: BTreeMap<&str, SinkStatus> = Sink::ALL
        .iter()
        .map(|&s| (s.group(), SinkStatus { stats: p.stats(s), backlog: doc_topics.iter().map(|t| p.backlog(s, t)).sum() }))
        .collect();
    let indexes = p.docstore.indexes();
    Json(json!({
        "now": now,
        "started_at": svc.started_at,
        "uptime_seconds": now.as_millis().saturating_sub(svc.started_at.as_millis()) / 1000,
        "ingest": svc.injector.stats(),
        "producers": svc.injector.registry().list().len(),
        "bus": topics.into_values().collect::<Vec<_>>(),
        "sinks": sinks,
        "docstore": { "documents": p.docstore.doc_count(), "indexes": indexes.len() },
        "tsdb": p.tsdb.cardinality(),
        "archive": { "partitions": p.archive.partitions().len() },
        "push_groups": svc.push.groups().len(),
        "scrape_targets": svc.scraper.as_ref().map(|s| s.targets()).unwrap_or_default(),
        "pubsub": svc.broker.as_ref().map(|b| json!({ "broker": b.stats(), "bridge": svc.bridge.stats() })),
        "alerting": svc.alerting.as_ref().map(|a| a.status()),
    }))
}
