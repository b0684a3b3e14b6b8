//! Real-time subject-based message proxy. Publishers fan out to every live
//! matching subscriber; nothing is stored. Access is controlled by tokens
//! with per-token publish and subscribe allow lists.

mod auth;
mod bridge;
mod broker;
mod client;
mod server;
mod subject;

pub use auth::{Grants, TokenError, TokenTable};
pub use bridge::{Bridge, BridgeOutcome, BridgeStats, MetricMessage};
pub use broker::{Broker, BrokerError, BrokerStats, ConnId, Outbound, PublishOutcome, DEFAULT_MAX_PENDING};
pub use client::{Client, ClientError, Event, Message};
pub use server::{parse_command, serve, Command, ProxyConfig, ProxyHandle, MAX_LINE};
pub use subject::{match_subject, Pattern, SubjectError, Token};
