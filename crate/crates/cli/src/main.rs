//! `fairstream`: run the service, replay logger files, run QC in batch,
//! export datastreams and verify a data directory.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on usage errors
//! (bad arguments, unreadable or invalid config, QC syntax errors). Data
//! goes to stdout, diagnostics to stderr.

mod error;
mod export;
mod replay;

use std::fs::{File, TryLockError};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairstream_core::platform::LOCK_FILE;
use fairstream_core::{server, Config, Platform};
use fairstream_ingest::{parse_timestamp, TimestampFormat};
use fairstream_qc::FlagScheme;
use fairstream_store::verify_data_dir;
use tracing::{error, warn};
use tracing_subscriber::EnvFilter;
use uuid::Uuid;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fairstream", version, about = "Environmental time-series platform")]
struct Cli {
    /// Service configuration file. Subcommands other than `qc run` also
    /// accept it after their name.
    #[arg(long, env = "FAIRSTREAM_CONFIG", default_value = "fairstream.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run HTTP, ingestion and QC workers until SIGINT or SIGTERM.
    Serve {
        #[command(flatten)]
        service: ServiceConfig,
    },
    #[command(subcommand)]
    Ingest(IngestCommand),
    #[command(subcommand)]
    Qc(QcCommand),
    /// Write every observation of a datastream to stdout.
    Export {
        #[arg(long)]
        datastream: u64,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long, value_enum, default_value_t = SchemeArg::Simple)]
        flags: SchemeArg,
        #[command(flatten)]
        service: ServiceConfig,
    },
    #[command(subcommand)]
    Store(StoreCommand),
}

#[derive(Debug, Subcommand)]
enum IngestCommand {
    /// Ingest a logger file for a Thing through the regular ingest path.
    Replay {
        #[arg(long)]
        thing: Uuid,
        #[arg(long)]
        file: PathBuf,
        /// Playback rate relative to the file's timestamps; 0 sends
        /// everything at once.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[command(flatten)]
        service: ServiceConfig,
    },
}

#[derive(Debug, Subcommand)]
enum QcCommand {
    /// Run a QC config over a time window and print the report.
    Run {
        #[arg(long)]
        datastream: u64,
        /// Path to the config text.
        #[arg(long = "config", id = "qc_config")]
        qc_config: PathBuf,
        /// RFC3339, inclusive; defaults to the oldest stored point.
        #[arg(long)]
        from: Option<String>,
        /// RFC3339, inclusive; defaults to the newest stored point.
        #[arg(long)]
        to: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum StoreCommand {
    /// Check segments, sidecars, flag columns and logs of a data directory.
    Verify {
        /// Data directory; defaults to the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        service: ServiceConfig,
    },
}

/// Per-subcommand override of the top-level `--config`.
#[derive(Debug, Args)]
struct ServiceConfig {
    /// Service configuration file.
    #[arg(long = "config")]
    path: Option<PathBuf>,
}

impl ServiceConfig {
    fn resolve(self, top_level: PathBuf) -> PathBuf {
        self.path.unwrap_or(top_level)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    StaJson,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Simple,
    Float,
}

impl From<SchemeArg> for FlagScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Simple => FlagScheme::Simple,
            SchemeArg::Float => FlagScheme::Float,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .init();

    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Serve { service } => serve(&service.resolve(cli.config)),
        Command::Ingest(IngestCommand::Replay { thing, file, speed, service }) => {
            let config = service.resolve(cli.config);
            if !speed.is_finite() || speed < 0.0 {
                return Err(CliError::Usage(format!("--speed must be a non-negative number, got {speed}")));
            }
            let payload = read_input(&file)?;
            let platform = open_platform(&config)?;
            let summary = replay::replay(&platform, thing, &payload, speed)?;
            print_json(&serde_json::to_value(&summary).expect("summary serializes"))?;
            let qc_failed = drain_qc(&platform);
            platform.close()?;
            Ok(if qc_failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Qc(QcCommand::Run { datastream, qc_config, from, to }) => {
            let text = String::from_utf8(read_input(&qc_config)?)
                .map_err(|_| CliError::Usage(format!("{} is not UTF-8", qc_config.display())))?;
            let from = from.as_deref().map(|s| parse_time("--from", s)).transpose()?;
            let to = to.as_deref().map(|s| parse_time("--to", s)).transpose()?;
            let platform = open_platform(&cli.config)?;
            let report = platform.run_qc_batch(datastream, &text, from, to)?;
            print_json(&serde_json::to_value(&report).expect("report serializes"))?;
            platform.close()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { datastream, format, flags, service } => {
            let platform = open_platform(&service.resolve(cli.config))?;
            match format {
                ExportFormat::Csv => export::write_csv(&platform, datastream, flags.into(), io::stdout().lock())?,
                ExportFormat::StaJson => {
                    let doc = export::sta_json(&platform, datastream, flags.into())?;
                    print_json(&doc)?;
                }
            }
            platform.close()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Store(StoreCommand::Verify { data, service }) => {
            let dir = match data {
                Some(dir) => dir,
                None => Config::load(&service.resolve(cli.config))?.data_dir,
            };
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
            }
            let _lock = lock_data_dir(&dir)?;
            let report = verify_data_dir(&dir)?;
            print_json(&serde_json::to_value(&report).expect("report serializes"))?;
            for p in &report.problems {
                eprintln!("{}: {}", p.path.display(), p.reason);
            }
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn serve(config_path: &Path) -> Result<ExitCode, CliError> {
    let config = Config::load(config_path)?;
    let platform = Arc::new(Platform::open(config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    let served = runtime.block_on(server::serve(platform.clone(), server::shutdown_signal()));
    drop(runtime);
    let closed = match Arc::try_unwrap(platform) {
        Ok(p) => p.close().map_err(CliError::from),
        Err(_) => Err(CliError::Runtime("platform still in use at shutdown".into())),
    };
    served?;
    closed?;
    Ok(ExitCode::SUCCESS)
}

fn open_platform(config_path: &Path) -> Result<Platform, CliError> {
    Ok(Platform::open(Config::load(config_path)?)?)
}

/// Runs QC triggered by the replay. Returns whether any run failed.
fn drain_qc(platform: &Platform) -> bool {
    let mut failed = false;
    while platform.has_pending_qc() {
        for (id, outcome) in platform.run_pending_qc() {
            if let Err(e) = outcome {
                error!(attachment = id, error = %e, "QC run failed");
                failed = true;
            }
        }
    }
    failed
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::ReadInput {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_time(flag: &str, text: &str) -> Result<i64, CliError> {
    parse_timestamp(text, TimestampFormat::Rfc3339).map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

/// Holds the data directory lock for read-only commands that do not open
/// the platform.
fn lock_data_dir(dir: &Path) -> Result<File, CliError> {
    let file = File::create(dir.join(LOCK_FILE))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => {
            Err(CliError::Runtime(format!("data directory {} is in use by another process", dir.display())))
        }
        Err(TryLockError::Error(e)) => {
            warn!(error = %e, "cannot lock data directory");
            Err(e.into())
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}
