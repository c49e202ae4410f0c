//! Ingestion gateway: payload parsing under per-Thing profiles, transport
//! credentials, the drop-directory scanner and the MQTT consumer.

pub mod credential;
pub mod dropdir;
pub mod mqtt;
pub mod parse;
pub mod profile;

use serde::Serialize;
use thiserror::Error;
use uuid::Uuid;

pub use credential::{generate_secret, IngestCredential, SecretHash, Transport};
pub use dropdir::{scan_dropdir, DropReport, FileReport, FileStatus};
pub use mqtt::{thing_from_topic, MqttBatcher, MqttSettings, MqttStats, INGEST_TOPIC_FILTER};
pub use parse::{parse_payload, parse_timestamp, ParsedPayload, PayloadUndecodable, RowError};
pub use profile::{
    ColumnRef, DecimalSeparator, ParserProfile, PayloadKind, ProfileError, TimestampFormat,
    ValueColumn,
};

/// Result of one accepted payload: `{"accepted": n, "errors": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PushSummary {
    pub accepted: usize,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("unknown thing {0}")]
    UnknownThing(Uuid),
    #[error("credential of {username:?} does not grant access to {topic:?}")]
    AuthMismatch { username: String, topic: String },
    #[error(transparent)]
    Undecodable(#[from] PayloadUndecodable),
    /// The write path failed; the payload may be retried.
    #[error("storage failure: {0}")]
    Sink(String),
}

/// Where parsed payloads go. Implemented by the platform, which owns the
/// Thing profiles and the store writers.
pub trait IngestSink: Send + Sync {
    fn ingest(
        &self,
        thing: Uuid,
        source: Transport,
        payload: &[u8],
    ) -> Result<PushSummary, IngestError>;
}
