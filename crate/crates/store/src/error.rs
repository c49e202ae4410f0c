use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown datastream {0}")]
    UnknownDatastream(u64),

    #[error("datastream {0} already exists")]
    DatastreamExists(u64),

    #[error("the writer for datastream {0} is already handed out")]
    WriterTaken(u64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("unknown timestamp(s) in datastream {datastream}: {timestamps:?}")]
    UnknownTimestamp { datastream: u64, timestamps: Vec<i64> },

    #[error("invalid flag value {0}")]
    InvalidFlag(f32),

    #[error("invalid query range: start {start} > end {end}")]
    InvalidRange { start: i64, end: i64 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| StoreError::Io {
            path: path.into(),
            source,
        })
    }
}
