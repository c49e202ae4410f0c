use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{RegistryError, Result};
use crate::model::{Device, DeviceDraft, Mount, MountDraft};

pub const DEFAULT_PID_PREFIX: &str = "20.500.0000";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    next_device_id: u64,
    next_mount_id: u64,
    devices: BTreeMap<u64, Device>,
    mounts: BTreeMap<u64, Mount>,
}

#[derive(Debug, Clone, Default)]
pub struct SearchQuery {
    /// Case-insensitive substring over short name, manufacturer, model and
    /// description.
    pub text: String,
    pub device_type: Option<String>,
    pub manufacturer: Option<String>,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
}

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub devices: Vec<Device>,
}

/// Device and mount records, persisted as one JSON snapshot file that is
/// replaced atomically on every write.
pub struct Registry {
    path: Option<PathBuf>,
    pid_prefix: String,
    state: RwLock<State>,
}

impl Registry {
    pub fn in_memory(pid_prefix: impl Into<String>) -> Self {
        Self {
            path: None,
            pid_prefix: pid_prefix.into(),
            state: RwLock::new(State {
                next_device_id: 1,
                next_mount_id: 1,
                ..State::default()
            }),
        }
    }

    pub fn open(path: impl Into<PathBuf>, pid_prefix: impl Into<String>) -> Result<Self> {
        let path = path.into();
        let state = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RegistryError::Corrupt {
                path: path.clone(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State {
                next_device_id: 1,
                next_mount_id: 1,
                ..State::default()
            },
            Err(source) => return Err(RegistryError::Io { path, source }),
        };
        Ok(Self {
            path: Some(path),
            pid_prefix: pid_prefix.into(),
            state: RwLock::new(state),
        })
    }

    pub fn pid_prefix(&self) -> &str {
        &self.pid_prefix
    }

    fn persist(&self, state: &State) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let bytes = serde_json::to_vec(state).expect("registry state serializes");
        write_atomic(path, &bytes).map_err(|source| RegistryError::Io {
            path: path.clone(),
            source,
        })
    }

    /// Applies `f` to a copy of the state and commits it only if `f` and the
    /// snapshot write both succeed.
    fn transact<T>(&self, f: impl FnOnce(&mut State) -> Result<T>) -> Result<T> {
        let mut guard = self.state.write();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        self.persist(&next)?;
        *guard = next;
        Ok(out)
    }

    pub fn register_device(&self, draft: DeviceDraft) -> Result<Device> {
        draft.validate()?;
        let now = now();
        let id = self.transact(|s| {
            if let Some(existing) = s.devices.values().find(|d| {
                !d.archived
                    && d.serial_triple()
                        == (
                            draft.manufacturer.as_str(),
                            draft.model.as_str(),
                            draft.serial_number.as_str(),
                        )
            }) {
                return Err(RegistryError::DuplicateSerial {
                    existing: existing.id,
                });
            }
            let id = s.next_device_id;
            s.next_device_id += 1;
            let mut properties = draft.properties.clone();
            properties.sort_by_key(|q| q.position_index);
            s.devices.insert(
                id,
                Device {
                    id,
                    pid: String::new(),
                    short_name: draft.short_name.clone(),
                    manufacturer: draft.manufacturer.clone(),
                    model: draft.model.clone(),
                    serial_number: draft.serial_number.clone(),
                    device_type: draft.device_type.clone(),
                    description: draft.description.clone(),
                    properties,
                    contacts: draft.contacts.clone(),
                    archived: false,
                    created_at: now,
                    updated_at: now,
                },
            );
            mint_locked(s, &self.pid_prefix, id)?;
            Ok(id)
        })?;
        self.device(id)
    }

    /// Assigns a persistent identifier to a device that has none yet.
    pub fn mint_pid(&self, device_id: u64) -> Result<String> {
        self.transact(|s| mint_locked(s, &self.pid_prefix, device_id))
    }

    pub fn device(&self, id: u64) -> Result<Device> {
        self.state
            .read()
            .devices
            .get(&id)
            .cloned()
            .ok_or(RegistryError::UnknownDevice(id))
    }

    pub fn device_by_pid(&self, pid: &str) -> Result<Device> {
        self.state
            .read()
            .devices
            .values()
            .find(|d| d.pid == pid)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownPid(pid.to_string()))
    }

    /// Landing document of a PID: a JSON snapshot of the device record.
    pub fn resolve_pid(&self, pid: &str) -> Result<serde_json::Value> {
        let device = self.device_by_pid(pid)?;
        Ok(serde_json::to_value(device).expect("device serializes"))
    }

    pub fn devices(&self) -> Vec<Device> {
        self.state.read().devices.values().cloned().collect()
    }

    /// Archived devices stay resolvable but release their serial triple.
    pub fn archive_device(&self, id: u64) -> Result<Device> {
        let now = now();
        self.transact(|s| {
            let d = s.devices.get_mut(&id).ok_or(RegistryError::UnknownDevice(id))?;
            d.archived = true;
            d.updated_at = now;
            Ok(d.clone())
        })
    }

    pub fn add_mount(&self, device_id: u64, draft: MountDraft) -> Result<Mount> {
        draft.validate()?;
        let now = now();
        self.transact(|s| {
            let device = s
                .devices
                .get_mut(&device_id)
                .ok_or(RegistryError::UnknownDevice(device_id))?;
            if device.archived {
                return Err(RegistryError::Archived(device_id));
            }
            device.updated_at = now;
            if let Some(conflict) = s
                .mounts
                .values()
                .filter(|m| m.device_id == device_id)
                .find(|m| m.overlaps(draft.begin, draft.end))
            {
                return Err(RegistryError::Overlap {
                    conflicting: conflict.id,
                });
            }
            let id = s.next_mount_id;
            s.next_mount_id += 1;
            let mount = Mount {
                id,
                device_id,
                configuration_label: draft.configuration_label.clone(),
                begin: draft.begin,
                end: draft.end,
                offset_x: draft.offset_x,
                offset_y: draft.offset_y,
                offset_z: draft.offset_z,
                begin_description: draft.begin_description.clone(),
            };
            s.mounts.insert(id, mount.clone());
            Ok(mount)
        })
    }

    /// Deployment history sorted by begin.
    pub fn mounts(&self, device_id: u64) -> Result<Vec<Mount>> {
        let s = self.state.read();
        if !s.devices.contains_key(&device_id) {
            return Err(RegistryError::UnknownDevice(device_id));
        }
        let mut out: Vec<Mount> = s
            .mounts
            .values()
            .filter(|m| m.device_id == device_id)
            .cloned()
            .collect();
        out.sort_by_key(|m| (m.begin, m.id));
        Ok(out)
    }

    pub fn search(&self, q: &SearchQuery) -> SearchPage {
        let needle = q.text.to_lowercase();
        let eq = |filter: &Option<String>, value: &str| {
            filter
                .as_ref()
                .is_none_or(|f| f.eq_ignore_ascii_case(value))
        };
        let hits: Vec<Device> = self
            .state
            .read()
            .devices
            .values()
            .filter(|d| {
                needle.is_empty()
                    || [&d.short_name, &d.manufacturer, &d.model, &d.description]
                        .iter()
                        .any(|f| f.to_lowercase().contains(&needle))
            })
            .filter(|d| eq(&q.device_type, &d.device_type) && eq(&q.manufacturer, &d.manufacturer))
            .cloned()
            .collect();
        let page_size = match q.page_size {
            0 => DEFAULT_PAGE_SIZE,
            n => n.min(MAX_PAGE_SIZE),
        };
        let page = q.page.max(1);
        SearchPage {
            total: hits.len(),
            page,
            page_size,
            devices: hits
                .into_iter()
                .skip((page - 1).saturating_mul(page_size))
                .take(page_size)
                .collect(),
        }
    }
}

fn mint_locked(s: &mut State, prefix: &str, device_id: u64) -> Result<String> {
    let device = s
        .devices
        .get(&device_id)
        .ok_or(RegistryError::UnknownDevice(device_id))?;
    if !device.pid.is_empty() {
        return Err(RegistryError::AlreadyMinted(device_id));
    }
    let pid = loop {
        let candidate = format!("{prefix}/{}", uuid::Uuid::new_v4());
        if !s.devices.values().any(|d| d.pid == candidate) {
            break candidate;
        }
    };
    s.devices.get_mut(&device_id).expect("checked").pid = pid.clone();
    Ok(pid)
}

fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

/// Write to a sibling temp file, fsync, rename over `path`, fsync the dir.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}
