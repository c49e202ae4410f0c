use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown device {0}")]
    UnknownDevice(u64),
    #[error("unknown persistent identifier {0:?}")]
    UnknownPid(String),
    #[error("device with this manufacturer, model and serial number already registered as {existing}")]
    DuplicateSerial { existing: u64 },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("device {0} already has a persistent identifier")]
    AlreadyMinted(u64),
    #[error("mount overlaps existing mount {conflicting}")]
    Overlap { conflicting: u64 },
    #[error("device {0} is archived")]
    Archived(u64),
    #[error("registry file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("registry file {path} is unreadable: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;
