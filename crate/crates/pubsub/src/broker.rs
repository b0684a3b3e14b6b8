//! Transport-independent subscription registry and fan-out.
//!
//! Every connection owns an unbounded outbound queue drained by its
//! writer. A publish only enqueues, so it never waits on a subscriber.
//! Bytes queued but not yet written are tracked per subscription; a
//! subscription whose backlog would exceed the limit is evicted instead.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::mpsc::UnboundedSender;

use crate::subject::Pattern;

pub type ConnId = u64;

pub const DEFAULT_MAX_PENDING: u64 = 8 * 1024 * 1024;

/// One frame queued for a connection's writer.
#[derive(Debug)]
pub enum Outbound {
    Msg { subject: Arc<str>, sid: Arc<str>, payload: Arc<[u8]>, pending: Arc<AtomicU64> },
    Line(String),
}

impl Outbound {
    /// Appends the wire encoding of the frame.
    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Outbound::Msg { subject, sid, payload, .. } => {
                out.extend_from_slice(format!("MSG {subject} {sid} {}\r\n", payload.len()).as_bytes());
                out.extend_from_slice(payload);
                out.extend_from_slice(b"\r\n");
            }
            Outbound::Line(l) => {
                out.extend_from_slice(l.as_bytes());
                out.extend_from_slice(b"\r\n");
            }
        }
    }

    /// Releases the frame's bytes from its subscription backlog once written.
    pub fn written(&self) {
        if let Outbound::Msg { pending, .. } = self {
            pending.fetch_sub(msg_size(self), Ordering::AcqRel);
        }
    }
}

fn msg_size(o: &Outbound) -> u64 {
    match o {
        Outbound::Msg { subject, sid, payload, .. } => (subject.len() + sid.len() + payload.len() + 32) as u64,
        Outbound::Line(l) => l.len() as u64 + 2,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("duplicate sid {0}")]
    DuplicateSid(String),
    #[error("unknown sid {0}")]
    UnknownSid(String),
}

struct Subscription {
    sid: Arc<str>,
    pattern: Pattern,
    pending: Arc<AtomicU64>,
    delivered: AtomicU64,
    tx: UnboundedSender<Outbound>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BrokerStats {
    pub connections: u64,
    pub subscriptions: u64,
    pub published: u64,
    pub delivered: u64,
    pub evicted: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PublishOutcome {
    pub delivered: usize,
    pub evicted: usize,
}

pub struct Broker {
    max_pending: u64,
    subs: RwLock<BTreeMap<(ConnId, Arc<str>), Arc<Subscription>>>,
    next_conn: AtomicU64,
    connections: AtomicU64,
    published: AtomicU64,
    delivered: AtomicU64,
    evicted: AtomicU64,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new(DEFAULT_MAX_PENDING)
    }
}

impl Broker {
    pub fn new(max_pending: u64) -> Self {
        Broker {
            max_pending,
            subs: RwLock::new(BTreeMap::new()),
            next_conn: AtomicU64::new(1),
            connections: AtomicU64::new(0),
            published: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
            evicted: AtomicU64::new(0),
        }
    }

    pub fn connect(&self) -> ConnId {
        self.connections.fetch_add(1, Ordering::Relaxed);
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// Drops every subscription of `conn`.
    pub fn disconnect(&self, conn: ConnId) {
        self.connections.fetch_sub(1, Ordering::Relaxed);
        self.subs.write().retain(|(c, _), _| *c != conn);
    }

    pub fn subscribe(&self, conn: ConnId, pattern: Pattern, sid: &str, tx: UnboundedSender<Outbound>) -> Result<(), BrokerError> {
        let mut subs = self.subs.write();
        let key = (conn, Arc::<str>::from(sid));
        if subs.contains_key(&key) {
            return Err(BrokerError::DuplicateSid(sid.to_string()));
        }
        let sub = Subscription { sid: key.1.clone(), pattern, pending: Arc::new(AtomicU64::new(0)), delivered: AtomicU64::new(0), tx };
        subs.insert(key, Arc::new(sub));
        Ok(())
    }

    pub fn unsubscribe(&self, conn: ConnId, sid: &str) -> Result<(), BrokerError> {
        match self.subs.write().remove(&(conn, Arc::from(sid))) {
            Some(_) => Ok(()),
            None => Err(BrokerError::UnknownSid(sid.to_string())),
        }
    }

    /// Enqueues `payload` once for every live subscription matching
    /// `subject`. Nothing is retained for later subscribers.
    pub fn publish(&self, subject: &Pattern, payload: &[u8]) -> PublishOutcome {
        self.published.fetch_add(1, Ordering::Relaxed);
        let subject_text: Arc<str> = subject.to_string().into();
        let payload: Arc<[u8]> = payload.into();
        let mut outcome = PublishOutcome::default();
        let mut evict = Vec::new();
        {
            let subs = self.subs.read();
            for (key, sub) in subs.iter() {
                if !sub.pattern.matches(subject) {
                    continue;
                }
                let msg = Outbound::Msg { subject: subject_text.clone(), sid: sub.sid.clone(), payload: payload.clone(), pending: sub.pending.clone() };
                let size = msg_size(&msg);
                let before = sub.pending.fetch_add(size, Ordering::AcqRel);
                if before + size > self.max_pending {
                    sub.pending.fetch_sub(size, Ordering::AcqRel);
                    let _ = sub.tx.send(Outbound::Line(format!("-ERR slow consumer: subscription {} evicted", sub.sid)));
                    evict.push(key.clone());
                    continue;
                }
                if sub.tx.send(msg).is_err() {
                    // writer is gone; the connection is closing
                    evict.push(key.clone());
                    continue;
                }
                sub.delivered.fetch_add(1, Ordering::Relaxed);
                outcome.delivered += 1;
            }
        }
        if !evict.is_empty() {
            let mut subs = self.subs.write();
            for k in evict {
                if subs.remove(&k).is_some() {
                    outcome.evicted += 1;
                }
            }
            self.evicted.fetch_add(outcome.evicted as u64, Ordering::Relaxed);
        }
        self.delivered.fetch_add(outcome.delivered as u64, Ordering::Relaxed);
        outcome
    }

    /// Messages enqueued so far to a live subscription.
    pub fn delivered_to(&self, conn: ConnId, sid: &str) -> Option<u64> {
        self.subs.read().get(&(conn, Arc::from(sid))).map(|s| s.delivered.load(Ordering::Relaxed))
    }

    pub fn stats(&self) -> BrokerStats {
        BrokerStats {
            connections: self.connections.load(Ordering::Relaxed),
            subscriptions: self.subs.read().len() as u64,
            published: self.published.load(Ordering::Relaxed),
            delivered: self.delivered.load(Ordering::Relaxed),
            evicted: self.evicted.load(Ordering::Relaxed),
        }
    }
}
