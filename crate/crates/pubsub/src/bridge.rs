use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use minimon_core::{MetricPoint, SeriesKey, SharedClock, TagSet, Timestamp};
use minimon_tsdb::Tsdb;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::unbounded_channel;

use crate::broker::{Broker, Outbound};
use crate::client::{Client, ClientError, Event};
use crate::subject::Pattern;

/// Payload the bridge understands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricMessage {
    pub name: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BridgeStats {
    pub written: u64,
    pub decode_drops: u64,
    pub write_drops: u64,
}

impl BridgeStats {
    pub fn total(&self) -> u64 {
        self.written + self.decode_drops + self.write_drops
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeOutcome {
    Written,
    DecodeDropped,
    WriteDropped,
}

/// Subscriber that writes metric messages into the time-series store.
/// Nothing is queued or retried: a message that cannot be written is
/// counted and dropped.
pub struct Bridge {
    tsdb: Arc<Tsdb>,
    clock: SharedClock,
    written: AtomicU64,
    decode_drops: AtomicU64,
    write_drops: AtomicU64,
}

fn decode(payload: &[u8], arrival: Timestamp) -> Option<MetricPoint> {
    let m: MetricMessage = serde_json::from_slice(payload).ok()?;
    let tags = TagSet::try_from(m.tags).ok()?;
    let key = SeriesKey::new(m.name, tags).ok()?;
    Some(MetricPoint::new(key, m.value, m.ts.map(Timestamp::from_millis).unwrap_or(arrival)))
}

impl Bridge {
    pub fn new(tsdb: Arc<Tsdb>, clock: SharedClock) -> Self {
        Bridge { tsdb, clock, written: AtomicU64::new(0), decode_drops: AtomicU64::new(0), write_drops: AtomicU64::new(0) }
    }

    pub fn handle(&self, payload: &[u8]) -> BridgeOutcome {
        let Some(point) = decode(payload, self.clock.now()) else {
            self.decode_drops.fetch_add(1, Ordering::Relaxed);
            return BridgeOutcome::DecodeDropped;
        };
        match self.tsdb.write(point) {
            Ok(()) => {
                self.written.fetch_add(1, Ordering::Relaxed);
                BridgeOutcome::Written
            }
            Err(e) => {
                tracing::debug!(error = %e, "bridge dropped a point");
                self.write_drops.fetch_add(1, Ordering::Relaxed);
                BridgeOutcome::WriteDropped
            }
        }
    }

    pub fn stats(&self) -> BridgeStats {
        BridgeStats {
            written: self.written.load(Ordering::Relaxed),
            decode_drops: self.decode_drops.load(Ordering::Relaxed),
            write_drops: self.write_drops.load(Ordering::Relaxed),
        }
    }

    /// Subscribes in-process to `patterns` on `broker` and consumes until
    /// the broker drops the subscriptions.
    pub fn attach(self: &Arc<Self>, broker: &Broker, patterns: &[Pattern]) -> tokio::task::JoinHandle<()> {
        let (tx, mut rx) = unbounded_channel();
        let conn = broker.connect();
        for (i, p) in patterns.iter().enumerate() {
            broker.subscribe(conn, p.clone(), &format!("bridge{i}"), tx.clone()).expect("sids are unique");
        }
        drop(tx);
        let me = self.clone();
        tokio::spawn(async move {
            while let Some(frame) = rx.recv().await {
                if let Outbound::Msg { payload, .. } = &frame {
                    me.handle(payload);
                }
                frame.written();
            }
        })
    }

    /// Subscribes over the wire and consumes until the connection closes.
    pub async fn run_remote(self: Arc<Self>, addr: SocketAddr, token: &str, patterns: &[String]) -> Result<(), ClientError> {
        let mut client = Client::connect(addr, token).await?;
        for (i, p) in patterns.iter().enumerate() {
            client.subscribe(p, &format!("bridge{i}")).await?;
        }
        loop {
            match client.next_event().await {
                Ok(Event::Msg(m)) => {
                    self.handle(&m.payload);
                }
                Ok(Event::Notice(n)) => tracing::warn!(notice = %n, "bridge notice"),
                Err(ClientError::Closed) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }
}
