use std::path::PathBuf;
use std::process::ExitCode;

use fairstream_core::config::ConfigError;
use fairstream_core::server::ServeError;
use fairstream_core::PlatformError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    ReadInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for anything the operator has to fix in the invocation or its
    /// inputs, 1 for failures at run time.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_)
            | CliError::Usage(_)
            | CliError::ReadInput { .. }
            | CliError::Platform(PlatformError::QcConfig { .. }) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
