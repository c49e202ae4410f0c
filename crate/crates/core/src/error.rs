use std::path::PathBuf;

use fairstream_ingest::IngestError;
use fairstream_qc::ConfigError as QcConfigError;
use fairstream_registry::RegistryError;
use fairstream_store::StoreError;
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::auth::AuthError;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("unknown thing {0}")]
    UnknownThing(Uuid),
    #[error("unknown datastream {0}")]
    UnknownDatastream(u64),
    #[error("unknown QC attachment {0}")]
    UnknownAttachment(u64),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("unknown or revoked dashboard")]
    UnknownDashboard,
    #[error("QC config line {line}: {message}")]
    QcConfig { line: usize, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ingest(IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

impl From<QcConfigError> for PlatformError {
    fn from(e: QcConfigError) -> Self {
        PlatformError::QcConfig {
            line: e.line(),
            message: e.to_string(),
        }
    }
}

impl From<IngestError> for PlatformError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::UnknownThing(t) => PlatformError::UnknownThing(t),
            other => PlatformError::Ingest(other),
        }
    }
}

impl PlatformError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        PlatformError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| PlatformError::Io { context, source }
    }

    pub fn status(&self) -> u16 {
        use PlatformError::*;
        match self {
            Auth(e) => e.status(),
            Validation { .. } | QcConfig { .. } => 400,
            UnknownThing(_) | UnknownDatastream(_) | UnknownAttachment(_) | UnknownToken(_)
            | UnknownDashboard => 404,
            Registry(e) => match e {
                RegistryError::UnknownDevice(_) | RegistryError::UnknownPid(_) => 404,
                RegistryError::Validation { .. } => 400,
                RegistryError::DuplicateSerial { .. }
                | RegistryError::AlreadyMinted(_)
                | RegistryError::Overlap { .. }
                | RegistryError::Archived(_) => 409,
                RegistryError::Io { .. } | RegistryError::Corrupt { .. } => 500,
            },
            Ingest(e) => match e {
                IngestError::UnknownThing(_) => 404,
                IngestError::AuthMismatch { .. } => 401,
                IngestError::Undecodable(_) => 422,
                IngestError::Sink(_) => 500,
            },
            Store(StoreError::UnknownDatastream(_)) => 404,
            Store(StoreError::UnknownTimestamp { .. }) => 400,
            Store(_) | Locked(_) | Io { .. } => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        use PlatformError::*;
        match self {
            Auth(e) => e.reason(),
            Validation { .. } => "ValidationError",
            UnknownThing(_) => "UnknownThing",
            UnknownDatastream(_) => "UnknownDatastream",
            UnknownAttachment(_) => "UnknownAttachment",
            UnknownToken(_) => "UnknownToken",
            UnknownDashboard => "UnknownDashboard",
            QcConfig { .. } => "QcConfigError",
            Registry(e) => match e {
                RegistryError::UnknownDevice(_) => "UnknownDevice",
                RegistryError::UnknownPid(_) => "UnknownPid",
                RegistryError::DuplicateSerial { .. } => "DuplicateSerial",
                RegistryError::Validation { .. } => "ValidationError",
                RegistryError::AlreadyMinted(_) => "AlreadyMinted",
                RegistryError::Overlap { .. } => "OverlapError",
                RegistryError::Archived(_) => "Archived",
                RegistryError::Io { .. } | RegistryError::Corrupt { .. } => "InternalError",
            },
            Ingest(e) => match e {
                IngestError::UnknownThing(_) => "UnknownThing",
                IngestError::AuthMismatch { .. } => "AuthMismatch",
                IngestError::Undecodable(_) => "PayloadUndecodable",
                IngestError::Sink(_) => "InternalError",
            },
            Store(StoreError::UnknownDatastream(_)) => "UnknownDatastream",
            Store(StoreError::UnknownTimestamp { .. }) => "UnknownTimestamp",
            Store(_) | Locked(_) | Io { .. } => "InternalError",
        }
    }

    /// `{"error": {"code", "message", ...details}}`.
    pub fn body(&self) -> Value {
        let mut error = json!({ "code": self.code(), "message": self.to_string() });
        let extra = match self {
            PlatformError::Validation { field, .. } => json!({ "field": field }),
            PlatformError::Registry(RegistryError::Validation { field, .. }) => {
                json!({ "field": field })
            }
            PlatformError::Registry(RegistryError::Overlap { conflicting }) => {
                json!({ "conflicting_mount": conflicting })
            }
            PlatformError::Registry(RegistryError::DuplicateSerial { existing }) => {
                json!({ "existing_device": existing })
            }
            PlatformError::QcConfig { line, .. } => json!({ "line": line }),
            _ => json!({}),
        };
        if let (Some(e), Value::Object(extra)) = (error.as_object_mut(), extra) {
            e.extend(extra);
        }
        json!({ "error": error })
    }
}
