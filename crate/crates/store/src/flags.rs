//! Flag columns: the append-only quality-annotation history of a datastream.
//!
//! File layout (`flags/<column_id>.ffc`, little-endian):
//!
//! ```text
//! magic "FFC1" | version u16 | datastream_id u64 | column_id u64
//! | meta_len u32 | meta (JSON) | count u32 | (timestamp i64, flag f32) * count
//! | crc32 of all preceding bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StoreError};

/// Flag of a point that no column touches.
pub const UNFLAGGED: f32 = f32::NEG_INFINITY;

pub const FLAG_MAGIC: &[u8; 4] = b"FFC1";
pub const FLAG_VERSION: u16 = 1;

/// Provenance of a flag column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagMeta {
    pub function: String,
    /// Parameters in canonical textual form.
    pub params: String,
    pub config_hash: String,
    pub engine_version: String,
    /// RFC3339 wall-clock time of the run that produced the column.
    pub run_at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagColumn {
    pub datastream_id: u64,
    pub column_id: u64,
    pub meta: FlagMeta,
    /// Sorted by timestamp, unique.
    pub entries: Vec<(i64, f32)>,
}

impl FlagColumn {
    pub fn get(&self, timestamp: i64) -> Option<f32> {
        self.entries
            .binary_search_by_key(&timestamp, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("flag meta serializes");
        let mut out = Vec::with_capacity(34 + meta.len() + self.entries.len() * 12);
        out.extend_from_slice(FLAG_MAGIC);
        out.extend_from_slice(&FLAG_VERSION.to_le_bytes());
        out.extend_from_slice(&self.datastream_id.to_le_bytes());
        out.extend_from_slice(&self.column_id.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (t, f) in &self.entries {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&f.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 4 + 2 + 8 + 8 + 4 + 4 + 4 {
            return Err(bad("truncated flag column"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(bad("flag column crc mismatch"));
        }
        if &body[0..4] != FLAG_MAGIC {
            return Err(bad("bad flag column magic"));
        }
        if u16::from_le_bytes(body[4..6].try_into().unwrap()) != FLAG_VERSION {
            return Err(bad("unsupported flag column version"));
        }
        let datastream_id = u64::from_le_bytes(body[6..14].try_into().unwrap());
        let column_id = u64::from_le_bytes(body[14..22].try_into().unwrap());
        let meta_len = u32::from_le_bytes(body[22..26].try_into().unwrap()) as usize;
        let meta_end = 26 + meta_len;
        let meta_bytes = body.get(26..meta_end).ok_or_else(|| bad("truncated meta"))?;
        let meta: FlagMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| bad(&format!("bad meta: {e}")))?;
        let count_bytes = body
            .get(meta_end..meta_end + 4)
            .ok_or_else(|| bad("truncated entry count"))?;
        let count = u32::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
        let entries_bytes = &body[meta_end + 4..];
        if entries_bytes.len() != count * 12 {
            return Err(bad("flag entry length mismatch"));
        }
        let entries: Vec<(i64, f32)> = entries_bytes
            .chunks_exact(12)
            .map(|c| {
                (
                    i64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                )
            })
            .collect();
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad("flag entries not strictly ascending"));
        }
        Ok(Self {
            datastream_id,
            column_id,
            meta,
            entries,
        })
    }
}

/// A persisted flag is UNFLAGGED or a finite value in `[0, 255]`.
pub fn is_persistable(flag: f32) -> bool {
    flag == UNFLAGGED || (0.0..=255.0).contains(&flag)
}

/// Column stack plus a materialized "current flag" index.
#[derive(Debug, Default)]
pub(crate) struct FlagHistory {
    pub columns: Vec<std::sync::Arc<FlagColumn>>,
    /// Flag of each timestamp in the newest column touching it.
    current: BTreeMap<i64, f32>,
}

impl FlagHistory {
    pub fn push(&mut self, column: std::sync::Arc<FlagColumn>) {
        debug_assert!(self
            .columns
            .last()
            .is_none_or(|c| c.column_id < column.column_id));
        for &(t, f) in &column.entries {
            self.current.insert(t, f);
        }
        self.columns.push(column);
    }

    pub fn current(&self, timestamp: i64) -> f32 {
        self.current.get(&timestamp).copied().unwrap_or(UNFLAGGED)
    }

    pub fn next_column_id(&self) -> u64 {
        self.columns.last().map_or(1, |c| c.column_id + 1)
    }
}
