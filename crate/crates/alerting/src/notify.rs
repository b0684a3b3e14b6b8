//! Notification payloads, receivers and the retrying dispatcher.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use minimon_core::{TagSet, Timestamp};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::config::{ReceiverConfig, ReceiverKind};
use crate::engine::AlertState;

pub const RETRY_BASE: Duration = Duration::from_secs(10);
pub const RETRY_CAP: Duration = Duration::from_secs(10 * 60);
const WEBHOOK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupStatus {
    Firing,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifiedAlert {
    pub labels: TagSet,
    pub annotations: BTreeMap<String, String>,
    pub value: f64,
    pub state: AlertState,
    pub started_at: Timestamp,
}

/// The WEBHOOK body and the FILE/STDOUT line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub group_labels: TagSet,
    pub status: GroupStatus,
    pub alerts: Vec<NotifiedAlert>,
}

/// One entry of the notification log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationRecord {
    pub at: Timestamp,
    pub receiver: String,
    pub group_key: String,
    pub notification: Notification,
}

impl NotificationRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Delay before retry number `attempt` (1-based): doubling from the base,
/// capped.
pub fn retry_delay(attempt: u32) -> Duration {
    let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
    RETRY_BASE.checked_mul(u32::try_from(factor).unwrap_or(u32::MAX)).map_or(RETRY_CAP, |d| d.min(RETRY_CAP))
}

#[derive(Debug, Clone)]
pub enum Receiver {
    File(PathBuf),
    Webhook { url: String, client: reqwest::Client },
    Stdout,
}

impl Receiver {
    pub fn from_config(c: &ReceiverConfig) -> Receiver {
        match c.kind {
            ReceiverKind::File => Receiver::File(PathBuf::from(&c.destination)),
            ReceiverKind::Webhook => Receiver::Webhook {
                url: c.destination.clone(),
                client: reqwest::Client::builder().timeout(WEBHOOK_TIMEOUT).build().expect("client builds"),
            },
            ReceiverKind::Stdout => Receiver::Stdout,
        }
    }

    pub async fn deliver(&self, n: &Notification) -> Result<(), String> {
        match self {
            Receiver::File(path) => {
                let mut line = serde_json::to_vec(n).expect("notifications serialize");
                line.push(b'\n');
                let path = path.clone();
                tokio::task::spawn_blocking(move || {
                    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
                    f.write_all(&line)?;
                    f.sync_data()
                })
                .await
                .map_err(|e| e.to_string())?
                .map_err(|e| e.to_string())
            }
            Receiver::Webhook { url, client } => {
                let resp = client.post(url).json(n).send().await.map_err(|e| e.to_string())?;
                if resp.status().is_success() {
                    Ok(())
                } else {
                    Err(format!("webhook answered {}", resp.status()))
                }
            }
            Receiver::Stdout => {
                println!("{}", serde_json::to_string(n).expect("notifications serialize"));
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    record: NotificationRecord,
    attempts: u32,
    next_at: Timestamp,
    seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DispatchStats {
    pub delivered: u64,
    pub failed_attempts: u64,
    pub superseded: u64,
    pub queued: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryFailure {
    pub group_key: String,
    pub receiver: String,
    pub attempts: u32,
    pub retry_at: Timestamp,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DispatchReport {
    pub delivered: usize,
    pub failures: Vec<DeliveryFailure>,
}

/// Delivers notification records, retrying failures with capped
/// exponential backoff. A newer record for the same group and receiver
/// replaces a queued one, since it carries the group's current state.
/// Due deliveries run concurrently, so one failing or slow receiver never
/// holds back another group.
pub struct Dispatcher {
    receivers: Mutex<BTreeMap<String, Receiver>>,
    queue: Mutex<Vec<Pending>>,
    stats: Mutex<DispatchStats>,
    seq: Mutex<u64>,
}

impl Dispatcher {
    pub fn new(receivers: &[ReceiverConfig]) -> Self {
        let d = Dispatcher { receivers: Mutex::new(BTreeMap::new()), queue: Mutex::new(Vec::new()), stats: Mutex::new(DispatchStats::default()), seq: Mutex::new(0) };
        d.set_receivers(receivers);
        d
    }

    pub fn set_receivers(&self, receivers: &[ReceiverConfig]) {
        *self.receivers.lock() = receivers.iter().map(|c| (c.name.clone(), Receiver::from_config(c))).collect();
    }

    pub fn enqueue(&self, record: NotificationRecord) {
        let seq = {
            let mut s = self.seq.lock();
            *s += 1;
            *s
        };
        let mut q = self.queue.lock();
        let before = q.len();
        q.retain(|p| !(p.record.group_key == record.group_key && p.record.receiver == record.receiver));
        self.stats.lock().superseded += (before - q.len()) as u64;
        let next_at = record.at;
        q.push(Pending { record, attempts: 0, next_at, seq });
    }

    pub fn queued(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn stats(&self) -> DispatchStats {
        DispatchStats { queued: self.queued(), ..*self.stats.lock() }
    }

    /// Attempts every delivery due at `now`.
    pub async fn dispatch_due(&self, now: Timestamp) -> DispatchReport {
        let due: Vec<Pending> = {
            let mut q = self.queue.lock();
            let (due, wait) = std::mem::take(&mut *q).into_iter().partition(|p| p.next_at <= now);
            *q = wait;
            due
        };
        if due.is_empty() {
            return DispatchReport::default();
        }
        let receivers = self.receivers.lock().clone();
        let attempts = due.into_iter().map(|p| {
            let receiver = receivers.get(&p.record.receiver).cloned();
            async move {
                let result = match receiver {
                    Some(r) => r.deliver(&p.record.notification).await,
                    None => Err(format!("receiver {:?} is not configured", p.record.receiver)),
                };
                (p, result)
            }
        });
        let results = futures::future::join_all(attempts).await;
        let mut report = DispatchReport::default();
        let mut q = self.queue.lock();
        let mut stats = self.stats.lock();
        for (mut p, result) in results {
            match result {
                Ok(()) => {
                    stats.delivered += 1;
                    report.delivered += 1;
                }
                Err(error) => {
                    stats.failed_attempts += 1;
                    p.attempts += 1;
                    p.next_at = now.saturating_add(retry_delay(p.attempts));
                    tracing::warn!(group = %p.record.group_key, receiver = %p.record.receiver, attempts = p.attempts, %error, "notification delivery failed");
                    report.failures.push(DeliveryFailure {
                        group_key: p.record.group_key.clone(),
                        receiver: p.record.receiver.clone(),
                        attempts: p.attempts,
                        retry_at: p.next_at,
                        error,
                    });
                    let newer = q.iter().any(|o| o.record.group_key == p.record.group_key && o.record.receiver == p.record.receiver && o.seq > p.seq);
                    if newer {
                        stats.superseded += 1;
                    } else {
                        q.push(p);
                    }
                }
            }
        }
        report
    }
}
