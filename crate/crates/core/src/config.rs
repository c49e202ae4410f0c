//! Service configuration, read from a single TOML file.
//!
//! ```toml
//! data_dir = "/var/lib/fairstream"
//! http_bind = "127.0.0.1:8080"
//! bootstrap_admin_token = "change-me"
//!
//! [mqtt]
//! enabled = true
//! host = "localhost"
//! port = 1883
//!
//! [ingest]
//! dropdir = "/srv/dropdir"
//! flush_interval_ms = 1000
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use fairstream_ingest::MqttSettings;
use fairstream_registry::DEFAULT_PID_PREFIX;
use fairstream_store::StoreConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    #[serde(default = "default_bind")]
    pub http_bind: String,
    /// Public URL prefix used in links; defaults to `http://<http_bind>`.
    #[serde(default)]
    pub base_url: Option<String>,
    pub bootstrap_admin_token: String,
    #[serde(default)]
    pub mqtt: MqttSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub registry: RegistrySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MqttSection {
    pub enabled: bool,
    pub host: String,
    pub port: u16,
    pub client_id: String,
    /// The gateway's own broker login; also accepted by the auth hooks.
    pub username: Option<String>,
    pub password: Option<String>,
    pub queue_capacity: usize,
}

impl Default for MqttSection {
    fn default() -> Self {
        let d = MqttSettings::default();
        Self {
            enabled: false,
            host: d.host,
            port: d.port,
            client_id: d.client_id,
            username: None,
            password: None,
            queue_capacity: d.queue_capacity,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub dropdir: Option<PathBuf>,
    pub flush_interval_ms: u64,
    pub dropdir_scan_interval_ms: u64,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            dropdir: None,
            flush_interval_ms: 1000,
            dropdir_scan_interval_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreSection {
    pub sync: bool,
    pub compaction_wal_bytes: u64,
    pub compaction_points: usize,
}

impl Default for StoreSection {
    fn default() -> Self {
        let d = StoreConfig::default();
        Self {
            sync: d.sync,
            compaction_wal_bytes: d.compaction_wal_bytes,
            compaction_points: d.compaction_points,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrySection {
    pub pid_prefix: String,
}

impl Default for RegistrySection {
    fn default() -> Self {
        Self {
            pid_prefix: DEFAULT_PID_PREFIX.to_string(),
        }
    }
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        if config.bootstrap_admin_token.len() < 16 {
            return Err("bootstrap_admin_token must be at least 16 characters".into());
        }
        if config.ingest.flush_interval_ms == 0 {
            return Err("ingest.flush_interval_ms must be positive".into());
        }
        Ok(config)
    }

    /// A configuration rooted at `data_dir` with defaults elsewhere.
    pub fn for_data_dir(data_dir: impl Into<PathBuf>, admin_token: impl Into<String>) -> Self {
        Self {
            data_dir: data_dir.into(),
            http_bind: default_bind(),
            base_url: None,
            bootstrap_admin_token: admin_token.into(),
            mqtt: MqttSection::default(),
            ingest: IngestSection::default(),
            store: StoreSection::default(),
            registry: RegistrySection::default(),
        }
    }

    pub fn base_url(&self) -> String {
        match &self.base_url {
            Some(url) => url.trim_end_matches('/').to_string(),
            None => format!("http://{}", self.http_bind),
        }
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            sync: self.store.sync,
            compaction_wal_bytes: self.store.compaction_wal_bytes,
            compaction_points: self.store.compaction_points,
            background_compaction: true,
        }
    }

    pub fn flush_interval(&self) -> Duration {
        Duration::from_millis(self.ingest.flush_interval_ms)
    }

    pub fn mqtt_settings(&self) -> MqttSettings {
        MqttSettings {
            host: self.mqtt.host.clone(),
            port: self.mqtt.port,
            client_id: self.mqtt.client_id.clone(),
            username: self.mqtt.username.clone(),
            password: self.mqtt.password.clone(),
            flush_interval: self.flush_interval(),
            queue_capacity: self.mqtt.queue_capacity,
        }
    }
}
