//! Alerting: threshold rules over time-series queries with a
//! pending/firing/resolved lifecycle, silences, inhibition, outage
//! overlay, grouped routing and retried delivery to receivers.

mod config;
mod engine;
mod notify;
mod service;
mod suppress;
pub mod text;

pub use config::{AlertConfig, AlertRule, Comparator, CompiledRule, ConfigError, InhibitRule, OutageFeedConfig, ReceiverConfig, ReceiverKind, RouteConfig, SilenceSpec};
pub use engine::{AlertEngine, AlertInstance, AlertState, EngineStats, SilenceError, StateChange, ALERTNAME, KNOWN_OUTAGE};
pub use notify::{retry_delay, DeliveryFailure, DispatchReport, DispatchStats, Dispatcher, GroupStatus, Notification, NotificationRecord, NotifiedAlert, Receiver, RETRY_BASE, RETRY_CAP};
pub use service::{AlertService, AlertingStatus};
pub use suppress::{inhibits, parse_outage_feed, resolve_inhibition, FeedParse, OutageWindow, Silence, Suppression, SuppressionKind};
