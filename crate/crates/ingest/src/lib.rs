//! Front door for all data: producer registration, document validation and
//! daily quota, HTTP push injection onto the bus, exporter scraping and a
//! push gateway for short-lived jobs.

pub mod exposition;
mod inject;
mod push;
mod registry;
mod schema;
mod scrape;
mod validate;

pub use inject::{doc_topic, InjectResult, InjectStats, Injector};
pub use push::{PushError, PushGateway, PushedGroup};
pub use registry::{Registry, RegistryError};
pub use schema::{registration, FieldDef, FieldType, ProducerRegistration, Route, SchemaDef, SchemaProblem, TsdbMapping};
pub use scrape::{to_points, ConfigError, ScrapeStatus, ScrapeTarget, Scraper, TargetConfig, TargetsFile};
pub use validate::{validate_document, Reason, ValidationError, DEFAULT_SKEW};
