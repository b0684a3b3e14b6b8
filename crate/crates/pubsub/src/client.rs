use std::collections::VecDeque;
use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server error: {0}")]
    Server(String),
    #[error("connection closed")]
    Closed,
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub subject: String,
    pub sid: String,
    pub payload: Vec<u8>,
}

/// Anything the server sends that is not a reply to a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Msg(Message),
    /// Asynchronous error such as a slow-consumer eviction.
    Notice(String),
}

#[derive(Debug)]
enum Frame {
    Ok,
    Err(String),
    Pong,
    Event(Event),
}

/// Minimal protocol client. Commands wait for their `+OK`; messages that
/// arrive meanwhile are kept for [`Client::next_event`].
pub struct Client {
    writer: BufWriter<OwnedWriteHalf>,
    frames: UnboundedReceiver<Result<Frame, ClientError>>,
    events: VecDeque<Event>,
}

impl Client {
    pub async fn connect(addr: SocketAddr, token: &str) -> Result<Client, ClientError> {
        let sock = TcpStream::connect(addr).await?;
        sock.set_nodelay(true)?;
        let (read, write) = sock.into_split();
        let (tx, frames) = unbounded_channel();
        tokio::spawn(read_frames(read, tx));
        let mut c = Client { writer: BufWriter::new(write), frames, events: VecDeque::new() };
        let opts = serde_json::json!({ "token": token });
        c.command(format!("CONNECT {opts}\r\n").as_bytes()).await?;
        Ok(c)
    }

    async fn command(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.writer.write_all(bytes).await?;
        self.writer.flush().await?;
        loop {
            match self.frames.recv().await.ok_or(ClientError::Closed)?? {
                Frame::Ok | Frame::Pong => return Ok(()),
                Frame::Err(e) => return Err(ClientError::Server(e)),
                Frame::Event(e) => self.events.push_back(e),
            }
        }
    }

    pub async fn publish(&mut self, subject: &str, payload: &[u8]) -> Result<(), ClientError> {
        let mut buf = format!("PUB {subject} {}\r\n", payload.len()).into_bytes();
        buf.extend_from_slice(payload);
        buf.extend_from_slice(b"\r\n");
        self.command(&buf).await
    }

    pub async fn subscribe(&mut self, pattern: &str, sid: &str) -> Result<(), ClientError> {
        self.command(format!("SUB {pattern} {sid}\r\n").as_bytes()).await
    }

    pub async fn unsubscribe(&mut self, sid: &str) -> Result<(), ClientError> {
        self.command(format!("UNSUB {sid}\r\n").as_bytes()).await
    }

    /// Round trip that also flushes every message the server queued
    /// before the PONG into the event buffer.
    pub async fn ping(&mut self) -> Result<(), ClientError> {
        self.command(b"PING\r\n").await
    }

    pub async fn next_event(&mut self) -> Result<Event, ClientError> {
        if let Some(e) = self.events.pop_front() {
            return Ok(e);
        }
        loop {
            match self.frames.recv().await.ok_or(ClientError::Closed)?? {
                Frame::Event(e) => return Ok(e),
                Frame::Err(e) => return Ok(Event::Notice(e)),
                Frame::Ok | Frame::Pong => {}
            }
        }
    }

    /// Next event, or `None` if nothing arrives within `wait`.
    pub async fn next_event_within(&mut self, wait: Duration) -> Result<Option<Event>, ClientError> {
        match tokio::time::timeout(wait, self.next_event()).await {
            Ok(r) => r.map(Some),
            Err(_) => Ok(None),
        }
    }

    /// Events already received, without waiting.
    pub fn drain_events(&mut self) -> Vec<Event> {
        while let Ok(f) = self.frames.try_recv() {
            if let Ok(Frame::Event(e)) = f {
                self.events.push_back(e);
            }
        }
        self.events.drain(..).collect()
    }
}

async fn read_frames(read: OwnedReadHalf, tx: UnboundedSender<Result<Frame, ClientError>>) {
    let mut reader = BufReader::new(read);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line).await {
            Ok(0) => return,
            Err(e) => {
                let _ = tx.send(Err(e.into()));
                return;
            }
            Ok(_) => {}
        }
        let text = line.trim_end_matches("\r\n");
        let frame = if text == "+OK" {
            Ok(Frame::Ok)
        } else if text == "PONG" {
            Ok(Frame::Pong)
        } else if let Some(reason) = text.strip_prefix("-ERR ") {
            if reason.starts_with("slow consumer") {
                Ok(Frame::Event(Event::Notice(reason.to_string())))
            } else {
                Ok(Frame::Err(reason.to_string()))
            }
        } else if let Some(rest) = text.strip_prefix("MSG ") {
            match parse_msg_header(rest) {
                Some((subject, sid, len)) => {
                    let mut payload = vec![0u8; len + 2];
                    if reader.read_exact(&mut payload).await.is_err() {
                        return;
                    }
                    payload.truncate(len);
                    Ok(Frame::Event(Event::Msg(Message { subject, sid, payload })))
                }
                None => Err(ClientError::Protocol(format!("bad MSG header {text:?}"))),
            }
        } else {
            Err(ClientError::Protocol(format!("unexpected line {text:?}")))
        };
        if tx.send(frame).is_err() {
            return;
        }
    }
}

fn parse_msg_header(rest: &str) -> Option<(String, String, usize)> {
    let mut it = rest.split(' ');
    let (subject, sid, len) = (it.next()?, it.next()?, it.next()?.parse().ok()?);
    it.next().is_none().then(|| (subject.to_string(), sid.to_string(), len))
}
