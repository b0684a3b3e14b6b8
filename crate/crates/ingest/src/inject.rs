use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use minimon_bus::{Bus, BusError};
use minimon_core::{Document, Timestamp};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::registry::Registry;
use crate::schema::Payload;
use crate::validate::{validate_document, Reason, ValidationError, DEFAULT_SKEW};

/// Bus topic carrying accepted documents of one type.
pub fn doc_topic(doc_type: &str) -> String {
    format!("docs.{doc_type}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum InjectResult {
    Ok { doc_index: usize, offset: u64 },
    Rejected(ValidationError),
}

impl InjectResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, InjectResult::Ok { .. })
    }

    pub fn reason(&self) -> Option<Reason> {
        match self {
            InjectResult::Ok { .. } => None,
            InjectResult::Rejected(e) => Some(e.reason),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InboundTime {
    Millis(u64),
    Rfc3339(String),
}

/// Wire shape of one injected document. `producer` and `type` default to
/// the request's and must agree with it when given.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InboundDoc {
    timestamp: InboundTime,
    payload: Payload,
    producer: Option<String>,
    #[serde(rename = "type")]
    doc_type: Option<String>,
}

fn parse_inbound(raw: &serde_json::Value, producer: &str, doc_type: &str) -> Result<Document, String> {
    let inbound = InboundDoc::deserialize(raw).map_err(|e| e.to_string())?;
    if inbound.producer.as_deref().is_some_and(|p| p != producer) {
        return Err(format!("document producer differs from request producer {producer:?}"));
    }
    if inbound.doc_type.as_deref().is_some_and(|t| t != doc_type) {
        return Err(format!("document type differs from request type {doc_type:?}"));
    }
    let timestamp = match inbound.timestamp {
        InboundTime::Millis(ms) => Timestamp::from_millis(ms),
        InboundTime::Rfc3339(s) => Timestamp::parse_rfc3339(&s).map_err(|e| e.to_string())?,
    };
    Ok(Document { payload: inbound.payload, producer: producer.to_string(), timestamp, doc_type: doc_type.to_string() })
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InjectStats {
    pub accepted: u64,
    pub rejected: u64,
    pub accepted_bytes: u64,
}

#[derive(Debug, Default)]
struct Counters {
    accepted: AtomicU64,
    rejected: AtomicU64,
    accepted_bytes: AtomicU64,
}

/// Validates, charges and publishes injected documents.
pub struct Injector {
    registry: Arc<Registry>,
    bus: Arc<Bus>,
    skew: Duration,
    /// Bytes charged per (producer, doc_type) on the UTC day in the value.
    quota: Mutex<HashMap<(String, String), (u64, u64)>>,
    counters: Counters,
}

impl std::fmt::Debug for Injector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Injector").field("skew", &self.skew).finish_non_exhaustive()
    }
}

impl Injector {
    pub fn new(registry: Arc<Registry>, bus: Arc<Bus>) -> Self {
        Injector { registry, bus, skew: DEFAULT_SKEW, quota: Mutex::new(HashMap::new()), counters: Counters::default() }
    }

    pub fn with_skew(mut self, skew: Duration) -> Self {
        self.skew = skew;
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Bytes charged today against `producer`/`doc_type`.
    pub fn quota_used(&self, producer: &str, doc_type: &str, now: Timestamp) -> u64 {
        let day = now.as_millis() / minimon_core::DAY_MS;
        match self.quota.lock().get(&(producer.to_string(), doc_type.to_string())) {
            Some((d, used)) if *d == day => *used,
            _ => 0,
        }
    }

    pub fn stats(&self) -> InjectStats {
        InjectStats {
            accepted: self.counters.accepted.load(Ordering::Relaxed),
            rejected: self.counters.rejected.load(Ordering::Relaxed),
            accepted_bytes: self.counters.accepted_bytes.load(Ordering::Relaxed),
        }
    }

    /// Processes a batch of raw JSON documents. Each result reports the
    /// document at the same index. Once the daily quota is exceeded, that
    /// document and every later one are rejected with `QUOTA_EXCEEDED`.
    pub fn inject(&self, producer: &str, doc_type: &str, batch: &[serde_json::Value], now: Timestamp) -> Result<Vec<InjectResult>, BusError> {
        let reg = self.registry.get(producer, doc_type);
        let topic = doc_topic(doc_type);
        let key = (producer.to_string(), doc_type.to_string());
        let day = now.as_millis() / minimon_core::DAY_MS;
        let mut out = Vec::with_capacity(batch.len());
        let mut tripped = false;
        let mut charged = 0u64;
        for (i, raw) in batch.iter().enumerate() {
            let reject = |reason, detail: String| InjectResult::Rejected(ValidationError::new(i, reason, detail));
            if tripped {
                out.push(reject(Reason::QuotaExceeded, "an earlier document in the batch exceeded the daily quota".into()));
                continue;
            }
            let doc = match parse_inbound(raw, producer, doc_type) {
                Ok(d) => d,
                Err(e) => {
                    out.push(reject(Reason::Malformed, e));
                    continue;
                }
            };
            let Some(reg) = &reg else {
                out.push(reject(Reason::UnknownProducer, format!("no registration for {producer}/{doc_type}")));
                continue;
            };
            if let Err((reason, detail)) = validate_document(&doc, &reg.schema, now, self.skew) {
                out.push(reject(reason, detail));
                continue;
            }
            let bytes = doc.canonical_bytes();
            let size = bytes.len() as u64;
            {
                let mut quota = self.quota.lock();
                let slot = quota.entry(key.clone()).or_insert((day, 0));
                if slot.0 != day {
                    *slot = (day, 0);
                }
                if slot.1 + size > reg.daily_quota_bytes {
                    tripped = true;
                    out.push(reject(Reason::QuotaExceeded, format!("{} + {size} bytes exceeds the daily quota of {}", slot.1, reg.daily_quota_bytes)));
                    continue;
                }
                slot.1 += size;
            }
            match self.bus.publish(&topic, &bytes) {
                Ok(offset) => {
                    charged += size;
                    out.push(InjectResult::Ok { doc_index: i, offset });
                }
                Err(e) => {
                    self.refund(&key, day, size);
                    return Err(e);
                }
            }
        }
        let ok = out.iter().filter(|r| r.is_ok()).count() as u64;
        self.counters.accepted.fetch_add(ok, Ordering::Relaxed);
        self.counters.rejected.fetch_add(out.len() as u64 - ok, Ordering::Relaxed);
        self.counters.accepted_bytes.fetch_add(charged, Ordering::Relaxed);
        Ok(out)
    }

    fn refund(&self, key: &(String, String), day: u64, size: u64) {
        if let Some(slot) = self.quota.lock().get_mut(key) {
            if slot.0 == day {
                slot.1 -= size;
            }
        }
    }
}
