//! The platform: owns the store, the registry and the platform records, and
//! implements Thing provisioning, ingestion, dashboards and tokens.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, TryLockError};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::Utc;
use fairstream_ingest::{
    mqtt::check_publish_acl, parse_payload, thing_from_topic, IngestCredential, IngestError,
    IngestSink, ParserProfile, PushSummary, SecretHash, Transport,
};
use fairstream_registry::Registry;
use fairstream_store::{DatastreamWriter, NewPoint, Store, StoreError};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tracing::{info, warn};
use uuid::Uuid;

use crate::auth::{check_token, issue_token, AuthError, Authenticator, Principal, Role, TokenRecord};
use crate::config::Config;
use crate::error::{PlatformError, Result};
use crate::qc::QcScheduler;
use crate::state::{
    Dashboard, DatastreamDecl, Panel, PlatformState, StateFile, Thing, DEFAULT_PANEL_RANGE,
};

pub const LOCK_FILE: &str = "fairstream.lock";
pub const STATE_FILE: &str = "platform.json";
pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThingSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub properties: Map<String, Value>,
    pub transport: Transport,
    pub parser_profile: ParserProfile,
    pub datastreams: Vec<DatastreamSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatastreamSpec {
    pub position: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub unit: String,
    #[serde(default)]
    pub device_id: Option<u64>,
    pub observed_property: ObservedPropertySpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedPropertySpec {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

/// The one-time view of a freshly issued ingest credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IssuedCredential {
    pub transport: Transport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CreatedThing {
    pub thing: Value,
    pub credential: IssuedCredential,
    pub dashboard: Value,
    pub share_token: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IssuedToken {
    pub id: String,
    pub role: Role,
    pub token: String,
}

/// Counters for rejected MQTT logins and publishes seen by the auth hooks.
#[derive(Debug, Default)]
pub struct HookStats {
    pub denied_logins: AtomicU64,
    pub auth_mismatch: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MqttAccess {
    Read,
    Write,
    Subscribe,
}

pub fn now_ns() -> i64 {
    Utc::now().timestamp_nanos_opt().unwrap_or(i64::MAX)
}

fn share_token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn new_share_token() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub struct Platform {
    config: Config,
    base_url: String,
    store: Store,
    registry: Registry,
    state: RwLock<PlatformState>,
    state_file: StateFile,
    /// Serializes read-modify-write cycles of the state document.
    commit: Mutex<()>,
    writers: RwLock<HashMap<u64, Arc<DatastreamWriter>>>,
    bootstrap: SecretHash,
    gateway_login: Option<(String, SecretHash)>,
    pub(crate) qc: QcScheduler,
    pub hook_stats: HookStats,
    _lock: File,
}

impl Platform {
    /// Opens the data directory exclusively and recovers every component.
    pub fn open(config: Config) -> Result<Self> {
        let data = config.data_dir.clone();
        fs::create_dir_all(&data).map_err(PlatformError::io(format!("create {}", data.display())))?;
        let lock_path = data.join(LOCK_FILE);
        let lock = File::create(&lock_path)
            .map_err(PlatformError::io(format!("open {}", lock_path.display())))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(PlatformError::Locked(data)),
            Err(TryLockError::Error(e)) => {
                return Err(PlatformError::io(format!("lock {}", lock_path.display()))(e))
            }
        }

        let store = Store::open(&data, config.store_config())?;
        let registry = Registry::open(data.join(REGISTRY_FILE), config.registry.pid_prefix.clone())?;
        let state_file = StateFile::new(data.join(STATE_FILE));
        let state = state_file
            .load()
            .map_err(PlatformError::io(format!("read {}", state_file.path().display())))?;

        let mut writers = HashMap::new();
        for id in state.datastreams.keys() {
            if !store.has_datastream(*id) {
                store.create_datastream(*id)?;
            }
            writers.insert(*id, Arc::new(store.writer(*id)?));
        }
        let gateway_login = match (&config.mqtt.username, &config.mqtt.password) {
            (Some(u), Some(p)) => Some((u.clone(), SecretHash::new(p))),
            _ => None,
        };
        info!(
            data_dir = %data.display(),
            things = state.things.len(),
            datastreams = state.datastreams.len(),
            "platform opened"
        );
        Ok(Self {
            base_url: config.base_url(),
            bootstrap: SecretHash::new(&config.bootstrap_admin_token),
            config,
            store,
            registry,
            state: RwLock::new(state),
            state_file,
            commit: Mutex::new(()),
            writers: RwLock::new(writers),
            gateway_login,
            qc: QcScheduler::default(),
            hook_stats: HookStats::default(),
            _lock: lock,
        })
    }

    /// Folds write-ahead logs into segments and releases the data directory.
    pub fn close(self) -> Result<()> {
        let Platform { store, writers, .. } = self;
        drop(writers);
        store.close()?;
        Ok(())
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// A consistent copy of the platform records.
    pub fn snapshot(&self) -> PlatformState {
        self.state.read().clone()
    }

    pub(crate) fn read_state<T>(&self, f: impl FnOnce(&PlatformState) -> T) -> T {
        f(&self.state.read())
    }

    /// Applies `f` to a copy of the records and commits it once persisted.
    pub(crate) fn mutate<T>(&self, f: impl FnOnce(&mut PlatformState) -> Result<T>) -> Result<T> {
        let _commit = self.commit.lock();
        let mut next = self.state.read().clone();
        let out = f(&mut next)?;
        self.state_file
            .save(&next)
            .map_err(PlatformError::io(format!("write {}", self.state_file.path().display())))?;
        *self.state.write() = next;
        Ok(out)
    }

    pub(crate) fn writer(&self, datastream: u64) -> Result<Arc<DatastreamWriter>> {
        self.writers
            .read()
            .get(&datastream)
            .cloned()
            .ok_or(PlatformError::UnknownDatastream(datastream))
    }

    pub(crate) fn add_store_datastream(&self, id: u64) -> Result<()> {
        match self.store.create_datastream(id) {
            Ok(()) | Err(StoreError::DatastreamExists(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let writer = Arc::new(self.store.writer(id)?);
        self.writers.write().insert(id, writer);
        Ok(())
    }

    pub fn thing(&self, uuid: Uuid) -> Result<Thing> {
        self.read_state(|s| s.things.get(&uuid).cloned())
            .ok_or(PlatformError::UnknownThing(uuid))
    }

    pub fn datastream(&self, id: u64) -> Result<DatastreamDecl> {
        self.read_state(|s| s.datastreams.get(&id).cloned())
            .ok_or(PlatformError::UnknownDatastream(id))
    }

    // ---- Things -------------------------------------------------------

    fn check_datastream(&self, field: &str, d: &DatastreamSpec) -> Result<()> {
        if d.position.trim().is_empty() {
            return Err(PlatformError::validation(format!("{field}.position"), "must not be empty"));
        }
        if d.name.trim().is_empty() {
            return Err(PlatformError::validation(format!("{field}.name"), "must not be empty"));
        }
        if let Some(device) = d.device_id {
            self.registry.device(device).map_err(|_| {
                PlatformError::validation(format!("{field}.device_id"), format!("unknown device {device}"))
            })?;
        }
        Ok(())
    }

    fn check_profile(profile: &ParserProfile, declared: &[&str]) -> Result<()> {
        profile
            .validate()
            .map_err(|e| PlatformError::validation("parser_profile", e.to_string()))?;
        match profile.positions().find(|p| !declared.contains(p)) {
            Some(p) => Err(PlatformError::validation(
                "parser_profile",
                format!("value column maps to undeclared position {p:?}"),
            )),
            None => Ok(()),
        }
    }

    fn validate_spec(&self, spec: &ThingSpec) -> Result<()> {
        if spec.name.trim().is_empty() {
            return Err(PlatformError::validation("name", "must not be empty"));
        }
        if spec.datastreams.is_empty() {
            return Err(PlatformError::validation("datastreams", "at least one datastream is required"));
        }
        let mut declared: Vec<&str> = Vec::new();
        for (i, d) in spec.datastreams.iter().enumerate() {
            let field = format!("datastreams[{i}]");
            self.check_datastream(&field, d)?;
            if declared.contains(&d.position.as_str()) {
                return Err(PlatformError::validation(
                    format!("{field}.position"),
                    format!("duplicate position {:?}", d.position),
                ));
            }
            declared.push(&d.position);
        }
        Self::check_profile(&spec.parser_profile, &declared)?;
        if spec.transport == Transport::Dropdir && self.config.ingest.dropdir.is_none() {
            return Err(PlatformError::validation("transport", "no drop directory is configured"));
        }
        Ok(())
    }

    /// Creates a Thing with its datastreams, ingest credential and dashboard.
    /// The credential secret and the share token appear only in the result.
    pub fn create_thing(&self, spec: ThingSpec, owner: &Principal) -> Result<CreatedThing> {
        self.validate_spec(&spec)?;
        let uuid = Uuid::new_v4();
        let (credential, secret) = match spec.transport {
            Transport::Dropdir => (None, None),
            t => {
                let (c, s) = IngestCredential::issue(uuid, t);
                (Some(c), Some(s))
            }
        };
        let directory = match (spec.transport, &self.config.ingest.dropdir) {
            (Transport::Dropdir, Some(root)) => {
                let dir = root.join(uuid.to_string());
                fs::create_dir_all(&dir).map_err(PlatformError::io(format!("create {}", dir.display())))?;
                Some(dir.display().to_string())
            }
            _ => None,
        };

        // Datastream ids are reserved first so the store directories exist
        // before the records that reference them.
        let first_id = self.read_state(|s| s.next_datastream_id);
        let count = spec.datastreams.len() as u64;
        for id in first_id..first_id + count {
            self.add_store_datastream(id)?;
        }
        let share_token = new_share_token();
        let thing = self.mutate(|s| {
            let first = s.next_datastream_id.max(first_id);
            if first != first_id {
                return Err(PlatformError::validation("datastreams", "concurrent provisioning, retry"));
            }
            let mut ids = Vec::new();
            for (k, d) in spec.datastreams.iter().enumerate() {
                let id = first_id + k as u64;
                let op = s.observed_property_id(&d.observed_property.name, &d.observed_property.definition);
                s.datastreams.insert(
                    id,
                    DatastreamDecl {
                        id,
                        thing_uuid: uuid,
                        position: d.position.clone(),
                        name: d.name.clone(),
                        description: d.description.clone(),
                        unit: d.unit.clone(),
                        device_id: d.device_id,
                        observed_property_id: op,
                        derived_from: None,
                    },
                );
                ids.push(id);
            }
            s.next_datastream_id = first_id + count;
            let thing = Thing {
                uuid,
                id: s.next_thing_id,
                name: spec.name.clone(),
                description: spec.description.clone(),
                properties: spec.properties.clone(),
                parser_profile: spec.parser_profile.clone(),
                transport: spec.transport,
                datastreams: ids,
                owner_token: owner.token_id.clone(),
                created_at: Utc::now(),
            };
            s.next_thing_id += 1;
            s.things.insert(uuid, thing.clone());
            if let Some(c) = &credential {
                s.credentials.insert(uuid, c.clone());
            }
            s.dashboards.insert(uuid, build_dashboard(s, &thing, share_token_hash(&share_token)));
            Ok(thing)
        })?;
        info!(thing = %uuid, transport = %thing.transport, "thing created");
        Ok(CreatedThing {
            thing: self.thing_view(uuid)?,
            credential: IssuedCredential {
                transport: spec.transport,
                username: credential.as_ref().map(|c| c.username.clone()),
                secret,
                directory,
            },
            dashboard: self.dashboard_view(uuid)?,
            share_token,
        })
    }

    /// Adds a measured datastream fed by `column` of the Thing's payloads.
    pub fn add_datastream(
        &self,
        thing: Uuid,
        spec: DatastreamSpec,
        column: fairstream_ingest::ColumnRef,
    ) -> Result<DatastreamDecl> {
        let current = self.thing(thing)?;
        self.check_datastream("datastream", &spec)?;
        let mut declared: Vec<String> = self.read_state(|s| {
            s.thing_datastreams(thing).map(|d| d.position.clone()).collect()
        });
        if declared.contains(&spec.position) {
            return Err(PlatformError::validation(
                "datastream.position",
                format!("duplicate position {:?}", spec.position),
            ));
        }
        declared.push(spec.position.clone());
        let mut profile = current.parser_profile.clone();
        profile.value_columns.push(fairstream_ingest::ValueColumn {
            column,
            position: spec.position.clone(),
        });
        Self::check_profile(&profile, &declared.iter().map(String::as_str).collect::<Vec<_>>())?;
        let id = self.read_state(|s| s.next_datastream_id);
        self.add_store_datastream(id)?;
        self.mutate(|s| {
            if s.next_datastream_id != id {
                return Err(PlatformError::validation("datastreams", "concurrent provisioning, retry"));
            }
            s.next_datastream_id += 1;
            let op = s.observed_property_id(&spec.observed_property.name, &spec.observed_property.definition);
            let decl = DatastreamDecl {
                id,
                thing_uuid: thing,
                position: spec.position.clone(),
                name: spec.name.clone(),
                description: spec.description.clone(),
                unit: spec.unit.clone(),
                device_id: spec.device_id,
                observed_property_id: op,
                derived_from: None,
            };
            s.datastreams.insert(id, decl.clone());
            let t = s.things.get_mut(&thing).expect("checked above");
            t.datastreams.push(id);
            t.parser_profile = profile;
            Ok(decl)
        })
    }

    pub fn list_things(&self) -> Vec<Value> {
        let uuids: Vec<Uuid> = self.read_state(|s| s.things.keys().copied().collect());
        uuids.into_iter().filter_map(|u| self.thing_view(u).ok()).collect()
    }

    /// Public description of a Thing; never contains secrets.
    pub fn thing_view(&self, uuid: Uuid) -> Result<Value> {
        let s = self.state.read();
        let t = s.things.get(&uuid).ok_or(PlatformError::UnknownThing(uuid))?;
        let base = &self.base_url;
        let datastreams: Vec<Value> = s
            .thing_datastreams(uuid)
            .map(|d| {
                let op = s.observed_properties.get(&d.observed_property_id);
                json!({
                    "id": d.id,
                    "position": d.position,
                    "name": d.name,
                    "description": d.description,
                    "unit": d.unit,
                    "device_id": d.device_id,
                    "observed_property": op.map(|p| json!({"name": p.name, "definition": p.definition})),
                    "derived_from": d.derived_from,
                    "sta": format!("{base}/v1.1/Datastreams({})", d.id),
                })
            })
            .collect();
        let credential = s.credentials.get(&uuid).map(|c| {
            json!({ "transport": c.transport, "username": c.username })
        });
        let attachments: Vec<Value> = s
            .attachments
            .values()
            .filter(|a| a.thing_uuid == uuid)
            .map(crate::qc::attachment_view)
            .collect();
        let mut endpoints = Map::new();
        match t.transport {
            Transport::Http => {
                endpoints.insert("http".into(), json!(format!("{base}/ingest/v1/things/{uuid}/observations")));
            }
            Transport::Mqtt => {
                endpoints.insert("mqtt_topic".into(), json!(fairstream_ingest::mqtt::topic_for(uuid)));
            }
            Transport::Dropdir => {
                if let Some(root) = &self.config.ingest.dropdir {
                    endpoints.insert("dropdir".into(), json!(root.join(uuid.to_string()).display().to_string()));
                }
            }
        }
        Ok(json!({
            "uuid": t.uuid,
            "id": t.id,
            "name": t.name,
            "description": t.description,
            "properties": t.properties,
            "transport": t.transport,
            "parser_profile": t.parser_profile,
            "datastreams": datastreams,
            "credential": credential,
            "endpoints": endpoints,
            "qc_attachments": attachments,
            "created_at": t.created_at,
            "sta": format!("{base}/v1.1/Things({})", t.id),
        }))
    }

    // ---- Dashboards ---------------------------------------------------

    /// Re-derives the Thing's dashboard. An unchanged Thing leaves the
    /// descriptor untouched; a revoked one gets a new share token, which is
    /// returned.
    pub fn provision_dashboard(&self, thing: Uuid) -> Result<(Value, Option<String>)> {
        self.thing(thing)?;
        let fresh = self.mutate(|s| {
            let t = s.things.get(&thing).cloned().ok_or(PlatformError::UnknownThing(thing))?;
            let (hash, fresh) = match s.dashboards.get(&thing) {
                Some(d) if !d.revoked => (d.share_token_hash.clone(), None),
                _ => {
                    let token = new_share_token();
                    (share_token_hash(&token), Some(token))
                }
            };
            let mut next = build_dashboard(s, &t, hash);
            if let Some(old) = s.dashboards.get(&thing) {
                if fresh.is_none() {
                    next.created_at = old.created_at;
                }
            }
            if s.dashboards.get(&thing) != Some(&next) {
                s.dashboards.insert(thing, next);
            }
            Ok(fresh)
        })?;
        Ok((self.dashboard_view(thing)?, fresh))
    }

    /// Descriptor without the share token.
    pub fn dashboard_view(&self, thing: Uuid) -> Result<Value> {
        let s = self.state.read();
        let d = s.dashboards.get(&thing).ok_or(PlatformError::UnknownDashboard)?;
        Ok(json!({
            "thing_uuid": d.thing_uuid,
            "panels": d.panels,
            "created_at": d.created_at,
            "revoked": d.revoked,
        }))
    }

    fn dashboard_by_token(&self, share_token: &str) -> Result<Dashboard> {
        let hash = share_token_hash(share_token);
        self.read_state(|s| {
            s.dashboards
                .values()
                .find(|d| !d.revoked && d.share_token_hash == hash)
                .cloned()
        })
        .ok_or(PlatformError::UnknownDashboard)
    }

    /// The Thing a valid share token grants access to.
    pub fn share_scope(&self, share_token: &str) -> Result<Uuid> {
        Ok(self.dashboard_by_token(share_token)?.thing_uuid)
    }

    /// Descriptor plus, per panel, an unauthenticated data URL scoped to the
    /// token's Thing.
    pub fn shared_dashboard(&self, share_token: &str) -> Result<Value> {
        let d = self.dashboard_by_token(share_token)?;
        let scoped = format!("{}/platform/v1/dashboards/{share_token}", self.base_url);
        let panels: Vec<Value> = d
            .panels
            .iter()
            .map(|p| {
                json!({
                    "title": p.title,
                    "datastream_id": p.datastream_id,
                    "default_range": p.default_range,
                    "data_url": format!("{scoped}/v1.1/Datastreams({})/Observations", p.datastream_id),
                })
            })
            .collect();
        Ok(json!({
            "thing_uuid": d.thing_uuid,
            "panels": panels,
            "created_at": d.created_at,
            "sta": format!("{scoped}/v1.1"),
        }))
    }

    pub fn revoke_share_token(&self, share_token: &str) -> Result<()> {
        let d = self.dashboard_by_token(share_token)?;
        self.mutate(|s| {
            if let Some(d) = s.dashboards.get_mut(&d.thing_uuid) {
                d.revoked = true;
            }
            Ok(())
        })
    }

    // ---- Tokens -------------------------------------------------------

    pub fn issue_token(&self, role: Role) -> Result<IssuedToken> {
        let (record, token) = issue_token(role);
        let id = record.id.clone();
        self.mutate(|s| {
            s.tokens.insert(record.id.clone(), record);
            Ok(())
        })?;
        Ok(IssuedToken { id, role, token })
    }

    pub fn revoke_token(&self, id: &str) -> Result<()> {
        self.mutate(|s| match s.tokens.get_mut(id) {
            Some(t) => {
                t.revoked = true;
                Ok(())
            }
            None => Err(PlatformError::UnknownToken(id.to_string())),
        })
    }

    pub fn list_tokens(&self) -> Vec<Value> {
        self.read_state(|s| {
            s.tokens
                .values()
                .map(|t: &TokenRecord| {
                    json!({"id": t.id, "role": t.role, "created_at": t.created_at, "revoked": t.revoked})
                })
                .collect()
        })
    }

    /// Counters for operators.
    pub fn stats(&self) -> Value {
        let (things, datastreams, attachments) =
            self.read_state(|s| (s.things.len(), s.datastreams.len(), s.attachments.len()));
        json!({
            "things": things,
            "datastreams": datastreams,
            "qc_attachments": attachments,
            "qc_pending": self.has_pending_qc(),
            "mqtt_denied_logins": self.hook_stats.denied_logins.load(Ordering::Relaxed),
            "mqtt_auth_mismatch": self.hook_stats.auth_mismatch.load(Ordering::Relaxed),
        })
    }

    // ---- Ingestion ----------------------------------------------------

    /// Checks an HTTP push credential for `thing`.
    pub fn authenticate_push(&self, thing: Uuid, bearer: Option<&str>) -> Result<()> {
        self.thing(thing)?;
        let ok = self.read_state(|s| {
            s.credentials
                .get(&thing)
                .filter(|c| c.transport == Transport::Http)
                .zip(bearer)
                .is_some_and(|(c, secret)| c.verify(secret))
        });
        if ok {
            Ok(())
        } else if bearer.is_none() {
            Err(AuthError::MissingToken.into())
        } else {
            Err(AuthError::InvalidToken.into())
        }
    }

    /// Parses `payload` with the Thing's profile and appends the rows. This
    /// is the one write path behind HTTP push, replay, MQTT and the drop
    /// directory; the caller has checked the credential.
    pub fn ingest_payload(&self, thing: Uuid, payload: &[u8]) -> Result<PushSummary, IngestError> {
        let (profile, targets) = self
            .read_state(|s| {
                let t = s.things.get(&thing)?;
                let targets: Vec<Option<u64>> = t
                    .parser_profile
                    .positions()
                    .map(|p| s.datastream_by_position(thing, p).map(|d| d.id))
                    .collect();
                Some((t.parser_profile.clone(), targets))
            })
            .ok_or(IngestError::UnknownThing(thing))?;
        let received_at = now_ns();
        let parsed = parse_payload(&profile, payload, received_at)?;
        let mut touched = Vec::new();
        for (series, target) in parsed.series.iter().zip(targets) {
            let (Some(ds), false) = (target, series.is_empty()) else {
                continue;
            };
            let points: Vec<NewPoint> = series
                .iter()
                .map(|&(t, v)| NewPoint {
                    phenomenon_time: t,
                    result: v,
                    result_time: received_at,
                })
                .collect();
            let writer = self.writer(ds).map_err(|e| IngestError::Sink(e.to_string()))?;
            writer.append(&points).map_err(|e| IngestError::Sink(e.to_string()))?;
            let min_t = series.iter().map(|p| p.0).min().expect("non-empty");
            touched.push((ds, min_t));
        }
        if !touched.is_empty() {
            self.qc_notify_ingest(thing, &touched);
        }
        Ok(PushSummary {
            accepted: parsed.accepted_rows,
            errors: parsed.errors,
        })
    }

    // ---- MQTT broker hooks ---------------------------------------------

    /// Broker login check: the gateway's own account, or a Thing whose
    /// credential is for MQTT.
    pub fn mqtt_login(&self, username: &str, password: &str) -> bool {
        if let Some((user, hash)) = &self.gateway_login {
            if user == username {
                return hash.verify(password);
            }
        }
        let ok = Uuid::parse_str(username).ok().is_some_and(|thing| {
            self.read_state(|s| {
                s.credentials
                    .get(&thing)
                    .is_some_and(|c| c.transport == Transport::Mqtt && c.verify(password))
            })
        });
        if !ok {
            self.hook_stats.denied_logins.fetch_add(1, Ordering::Relaxed);
            warn!(username, "mqtt login denied");
        }
        ok
    }

    pub fn mqtt_superuser(&self, username: &str) -> bool {
        self.gateway_login.as_ref().is_some_and(|(u, _)| u == username)
    }

    /// Broker ACL check: the gateway may read the ingest topics; a Thing may
    /// only publish on its own topic.
    pub fn mqtt_acl(&self, username: &str, topic: &str, access: MqttAccess) -> bool {
        let ok = match access {
            MqttAccess::Read | MqttAccess::Subscribe => {
                self.mqtt_superuser(username)
                    && (topic == fairstream_ingest::INGEST_TOPIC_FILTER || thing_from_topic(topic).is_some())
            }
            MqttAccess::Write => check_publish_acl(username, topic).is_ok_and(|thing| {
                self.read_state(|s| {
                    s.credentials
                        .get(&thing)
                        .is_some_and(|c| c.transport == Transport::Mqtt)
                })
            }),
        };
        if !ok {
            self.hook_stats.auth_mismatch.fetch_add(1, Ordering::Relaxed);
            warn!(username, topic, ?access, "mqtt access denied");
        }
        ok
    }
}

fn build_dashboard(s: &PlatformState, thing: &Thing, share_token_hash: String) -> Dashboard {
    let panels = thing
        .datastreams
        .iter()
        .filter_map(|id| s.datastreams.get(id))
        .map(|d| Panel {
            title: d.name.clone(),
            datastream_id: d.id,
            default_range: DEFAULT_PANEL_RANGE.to_string(),
        })
        .collect();
    Dashboard {
        thing_uuid: thing.uuid,
        panels,
        share_token_hash,
        created_at: thing.created_at,
        revoked: false,
    }
}

impl Authenticator for Platform {
    fn authenticate(&self, bearer: &str) -> Result<Principal, AuthError> {
        self.read_state(|s| check_token(&self.bootstrap, &s.tokens, bearer))
    }
}

/// Transport-bound entry point for the MQTT consumer and the drop directory.
impl IngestSink for Platform {
    fn ingest(&self, thing: Uuid, source: Transport, payload: &[u8]) -> Result<PushSummary, IngestError> {
        let transport = self
            .read_state(|s| s.things.get(&thing).map(|t| t.transport))
            .ok_or(IngestError::UnknownThing(thing))?;
        if transport != source {
            return Err(IngestError::AuthMismatch {
                username: thing.to_string(),
                topic: format!("{source} ingest"),
            });
        }
        self.ingest_payload(thing, payload)
    }
}

/// Datastream id per declared position of a Thing.
pub fn positions_of(state: &PlatformState, thing: Uuid) -> BTreeMap<String, u64> {
    state
        .thing_datastreams(thing)
        .map(|d| (d.position.clone(), d.id))
        .collect()
}
