//! Platform records and their persistence as one JSON document,
//! `<data>/platform.json`, replaced atomically on every change.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use fairstream_ingest::{IngestCredential, ParserProfile, Transport};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use uuid::Uuid;

use crate::auth::TokenRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thing {
    pub uuid: Uuid,
    /// STA `@iot.id`.
    pub id: u64,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub properties: Map<String, Value>,
    pub parser_profile: ParserProfile,
    pub transport: Transport,
    /// Measured datastreams in declaration order; derived series are not listed.
    pub datastreams: Vec<u64>,
    pub owner_token: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedFrom {
    pub source: u64,
    pub function: String,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatastreamDecl {
    pub id: u64,
    pub thing_uuid: Uuid,
    pub position: String,
    pub name: String,
    pub description: String,
    /// UCUM-style unit code.
    pub unit: String,
    pub device_id: Option<u64>,
    pub observed_property_id: u64,
    #[serde(default)]
    pub derived_from: Option<DerivedFrom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedProperty {
    pub id: u64,
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub title: String,
    pub datastream_id: u64,
    pub default_range: String,
}

pub const DEFAULT_PANEL_RANGE: &str = "now-7d";

/// Descriptor as persisted; the share token itself is kept only hashed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dashboard {
    pub thing_uuid: Uuid,
    pub panels: Vec<Panel>,
    pub share_token_hash: String,
    pub created_at: DateTime<Utc>,
    pub revoked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcScope {
    Thing(Uuid),
    Datastream(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    OnIngest,
    Interval(Duration),
}

/// `"on_ingest"` or `{"interval": "10min"}`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Named(String),
    Interval { interval: String },
}

impl Serialize for Schedule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Schedule::OnIngest => ScheduleRepr::Named("on_ingest".into()),
            Schedule::Interval(d) => ScheduleRepr::Interval {
                interval: humantime::format_duration(*d).to_string(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match ScheduleRepr::deserialize(d)? {
            ScheduleRepr::Named(n) if n == "on_ingest" => Ok(Schedule::OnIngest),
            ScheduleRepr::Named(n) => Err(D::Error::custom(format!(
                "unknown schedule {n:?}, expected \"on_ingest\" or {{\"interval\": ...}}"
            ))),
            ScheduleRepr::Interval { interval } => {
                let every = humantime::parse_duration(&interval).map_err(D::Error::custom)?;
                if every.is_zero() {
                    return Err(D::Error::custom("interval must be positive"));
                }
                Ok(Schedule::Interval(every))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcAttachment {
    pub id: u64,
    pub scope: QcScope,
    pub thing_uuid: Uuid,
    pub config_text: String,
    pub config_hash: String,
    pub schedule: Schedule,
    /// Explicit lookback in nanoseconds; derived from the config when absent.
    pub lookback_ns: Option<i64>,
    pub enabled: bool,
    /// Newest phenomenon time covered by a completed run.
    pub high_water_mark: Option<i64>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub next_thing_id: u64,
    pub next_datastream_id: u64,
    pub next_observed_property_id: u64,
    pub next_attachment_id: u64,
    pub things: BTreeMap<Uuid, Thing>,
    pub datastreams: BTreeMap<u64, DatastreamDecl>,
    pub observed_properties: BTreeMap<u64, ObservedProperty>,
    /// One ingest credential per Thing; absent for drop-directory Things.
    pub credentials: BTreeMap<Uuid, IngestCredential>,
    pub tokens: BTreeMap<String, TokenRecord>,
    pub dashboards: BTreeMap<Uuid, Dashboard>,
    pub attachments: BTreeMap<u64, QcAttachment>,
}

impl Default for PlatformState {
    fn default() -> Self {
        Self {
            next_thing_id: 1,
            next_datastream_id: 1,
            next_observed_property_id: 1,
            next_attachment_id: 1,
            things: BTreeMap::new(),
            datastreams: BTreeMap::new(),
            observed_properties: BTreeMap::new(),
            credentials: BTreeMap::new(),
            tokens: BTreeMap::new(),
            dashboards: BTreeMap::new(),
            attachments: BTreeMap::new(),
        }
    }
}

impl PlatformState {
    pub fn thing_by_id(&self, id: u64) -> Option<&Thing> {
        self.things.values().find(|t| t.id == id)
    }

    /// Every datastream of a Thing, derived ones included, by id.
    pub fn thing_datastreams(&self, thing: Uuid) -> impl Iterator<Item = &DatastreamDecl> {
        self.datastreams.values().filter(move |d| d.thing_uuid == thing)
    }

    pub fn datastream_by_position(&self, thing: Uuid, position: &str) -> Option<&DatastreamDecl> {
        self.thing_datastreams(thing).find(|d| d.position == position)
    }

    /// Id of the observed property with this name and definition, created
    /// on first use.
    pub fn observed_property_id(&mut self, name: &str, definition: &str) -> u64 {
        if let Some(p) = self
            .observed_properties
            .values()
            .find(|p| p.name == name && p.definition == definition)
        {
            return p.id;
        }
        let id = self.next_observed_property_id;
        self.next_observed_property_id += 1;
        self.observed_properties.insert(
            id,
            ObservedProperty {
                id,
                name: name.to_string(),
                definition: definition.to_string(),
            },
        );
        id
    }
}

pub struct StateFile {
    path: PathBuf,
}

impl StateFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> io::Result<PlatformState> {
        match fs::read(&self.path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(PlatformState::default()),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, state: &PlatformState) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(state).expect("platform state serializes");
        let tmp = self.path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent() {
            fs::File::open(dir)?.sync_all()?;
        }
        Ok(())
    }
}
