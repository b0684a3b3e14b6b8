//! TCP line protocol. Client to server:
//!
//! ```text
//! CONNECT {"token":"..."}\r\n
//! SUB <pattern> <sid>\r\n
//! UNSUB <sid>\r\n
//! PUB <subject> <nbytes>\r\n<payload>\r\n
//! PING\r\n
//! ```
//!
//! Server to client: `+OK\r\n`, `-ERR <reason>\r\n`,
//! `MSG <subject> <sid> <nbytes>\r\n<payload>\r\n`, `PONG\r\n`.
//! Every command except PING must follow a successful CONNECT.

use std::net::SocketAddr;
use std::sync::Arc;

use serde::Deserialize;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::auth::{Grants, TokenTable};
use crate::broker::{Broker, Outbound, DEFAULT_MAX_PENDING};
use crate::subject::Pattern;

pub const MAX_LINE: usize = 4096;

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    /// Per-subscription backlog limit in bytes.
    pub max_pending: u64,
    pub max_payload: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig { max_pending: DEFAULT_MAX_PENDING, max_payload: 1024 * 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Connect { token: String },
    Sub { pattern: String, sid: String },
    Unsub { sid: String },
    Pub { subject: String, len: usize },
    Ping,
}

#[derive(Deserialize)]
struct ConnectOptions {
    token: String,
}

/// Parses one command line without its `\r\n`.
pub fn parse_command(line: &str) -> Result<Command, String> {
    let (verb, rest) = line.split_once(' ').unwrap_or((line, ""));
    let args: Vec<&str> = if rest.is_empty() { Vec::new() } else { rest.split(' ').collect() };
    let arity = |n: usize| if args.len() == n && args.iter().all(|a| !a.is_empty()) { Ok(()) } else { Err(format!("{verb} takes {n} arguments")) };
    match verb {
        "CONNECT" => {
            let opts: ConnectOptions = serde_json::from_str(rest).map_err(|e| format!("invalid CONNECT options: {e}"))?;
            Ok(Command::Connect { token: opts.token })
        }
        "SUB" => {
            arity(2)?;
            Ok(Command::Sub { pattern: args[0].into(), sid: args[1].into() })
        }
        "UNSUB" => {
            arity(1)?;
            Ok(Command::Unsub { sid: args[0].into() })
        }
        "PUB" => {
            arity(2)?;
            let len = args[1].parse().map_err(|_| format!("invalid payload size {:?}", args[1]))?;
            Ok(Command::Pub { subject: args[0].into(), len })
        }
        "PING" if args.is_empty() => Ok(Command::Ping),
        _ => Err("unknown command".into()),
    }
}

/// A running proxy listener.
pub struct ProxyHandle {
    pub local_addr: SocketAddr,
    pub broker: Arc<Broker>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ProxyHandle {
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }
}

/// Binds the proxy and serves connections until shut down.
pub async fn serve(addr: SocketAddr, tokens: TokenTable, config: ProxyConfig) -> std::io::Result<ProxyHandle> {
    let listener = TcpListener::bind(addr).await?;
    let local_addr = listener.local_addr()?;
    let broker = Arc::new(Broker::new(config.max_pending));
    let (shutdown, mut stop) = watch::channel(false);
    let tokens = Arc::new(tokens);
    let config = Arc::new(config);
    let b = broker.clone();
    let task = tokio::spawn(async move {
        loop {
            tokio::select! {
                accepted = listener.accept() => match accepted {
                    Ok((sock, peer)) => {
                        let _ = sock.set_nodelay(true);
                        tokio::spawn(handle_conn(sock, peer, b.clone(), tokens.clone(), config.clone(), stop.clone()));
                    }
                    Err(e) => tracing::warn!(error = %e, "accept failed"),
                },
                _ = stop.changed() => break,
            }
        }
    });
    Ok(ProxyHandle { local_addr, broker, shutdown, task })
}

async fn write_frames(mut sock: OwnedWriteHalf, mut rx: UnboundedReceiver<Outbound>) {
    let mut buf = Vec::with_capacity(64 * 1024);
    while let Some(first) = rx.recv().await {
        let mut batch = vec![first];
        while batch.len() < 256 {
            match rx.try_recv() {
                Ok(f) => batch.push(f),
                Err(_) => break,
            }
        }
        buf.clear();
        for f in &batch {
            f.encode(&mut buf);
        }
        if sock.write_all(&buf).await.is_err() {
            return;
        }
        for f in &batch {
            f.written();
        }
    }
    let _ = sock.shutdown().await;
}

struct Session {
    grants: Option<Grants>,
    tx: UnboundedSender<Outbound>,
}

impl Session {
    fn reply(&self, line: impl Into<String>) {
        let _ = self.tx.send(Outbound::Line(line.into()));
    }

    fn err(&self, reason: impl std::fmt::Display) {
        self.reply(format!("-ERR {reason}"));
    }
}

async fn handle_conn(sock: TcpStream, peer: SocketAddr, broker: Arc<Broker>, tokens: Arc<TokenTable>, config: Arc<ProxyConfig>, mut stop: watch::Receiver<bool>) {
    let (read, write) = sock.into_split();
    let (tx, rx) = unbounded_channel();
    let writer = tokio::spawn(write_frames(write, rx));
    let conn = broker.connect();
    let mut session = Session { grants: None, tx };
    let mut reader = BufReader::new(read);
    let mut line = Vec::new();
    loop {
        line.clear();
        let mut limited = (&mut reader).take(MAX_LINE as u64 + 2);
        let n = tokio::select! {
            n = limited.read_until(b'\n', &mut line) => n,
            _ = stop.changed() => break,
        };
        match n {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let Some(text) = line.strip_suffix(b"\r\n").and_then(|l| std::str::from_utf8(l).ok()) else {
            session.err("malformed line");
            break;
        };
        let cmd = match parse_command(text) {
            Ok(c) => c,
            Err(e) => {
                session.err(e);
                continue;
            }
        };
        if let Command::Pub { subject, len } = cmd {
            if len > config.max_payload {
                session.err(format!("payload of {len} bytes exceeds the {} byte limit", config.max_payload));
                break;
            }
            let mut payload = vec![0u8; len + 2];
            if reader.read_exact(&mut payload).await.is_err() {
                break;
            }
            if !payload.ends_with(b"\r\n") {
                session.err("payload not terminated by CRLF");
                break;
            }
            payload.truncate(len);
            let Some(grants) = &session.grants else {
                session.err("authentication required");
                continue;
            };
            match Pattern::subject(&subject) {
                Err(e) => session.err(e),
                Ok(s) if !grants.may_publish(&s) => session.err(format!("permission denied for publish to {subject}")),
                Ok(s) => {
                    broker.publish(&s, &payload);
                    session.reply("+OK");
                }
            }
            continue;
        }
        match cmd {
            Command::Ping => session.reply("PONG"),
            Command::Connect { token } => match tokens.get(&token) {
                Some(g) => {
                    session.grants = Some(g.clone());
                    session.reply("+OK");
                }
                None => session.err("authorization violation"),
            },
            _ if session.grants.is_none() => session.err("authentication required"),
            Command::Sub { pattern, sid } => match Pattern::parse(&pattern) {
                Err(e) => session.err(e),
                Ok(p) if !session.grants.as_ref().is_some_and(|g| g.may_subscribe(&p)) => session.err(format!("permission denied for subscription to {pattern}")),
                Ok(p) => match broker.subscribe(conn, p, &sid, session.tx.clone()) {
                    Ok(()) => session.reply("+OK"),
                    Err(e) => session.err(e),
                },
            },
            Command::Unsub { sid } => match broker.unsubscribe(conn, &sid) {
                Ok(()) => session.reply("+OK"),
                Err(e) => session.err(e),
            },
            Command::Pub { .. } => unreachable!("handled above"),
        }
    }
    broker.disconnect(conn);
    drop(session);
    let _ = writer.await;
    tracing::debug!(%peer, "pubsub connection closed");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands() {
        assert_eq!(parse_command(r#"CONNECT {"token":"t"}"#), Ok(Command::Connect { token: "t".into() }));
        assert_eq!(parse_command("SUB a.> 1"), Ok(Command::Sub { pattern: "a.>".into(), sid: "1".into() }));
        assert_eq!(parse_command("UNSUB 1"), Ok(Command::Unsub { sid: "1".into() }));
        assert_eq!(parse_command("PUB a.b 5"), Ok(Command::Pub { subject: "a.b".into(), len: 5 }));
        assert_eq!(parse_command("PING"), Ok(Command::Ping));
        for bad in ["SUB a", "SUB a  1", "PUB a -1", "PUB a", "ping", "PING x", "CONNECT {}", "NOPE", ""] {
            assert!(parse_command(bad).is_err(), "{bad:?}");
        }
    }
}
