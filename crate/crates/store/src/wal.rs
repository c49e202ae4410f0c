//! Write-ahead log for a single datastream.
//!
//! Each record is `[len: u32][crc32: u32][payload]`. A record whose length or
//! checksum does not verify marks the end of the log: everything before it was
//! acknowledged, everything from it on is a torn write and is discarded.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{IoContext, Result};

const RECORD_POINTS: u8 = 1;
const POINT_LEN: usize = 32;

/// One logged point: timestamp, value, result time, observation id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalPoint {
    pub phenomenon_time: i64,
    pub value: f64,
    pub result_time: i64,
    pub id: u64,
}

#[derive(Debug, Default)]
pub struct Replay {
    pub points: Vec<WalPoint>,
    /// Offset of the first byte that did not belong to a complete record.
    pub valid_len: u64,
    pub torn_bytes: u64,
}

pub struct Wal {
    path: PathBuf,
    file: File,
    len: u64,
    sync: bool,
}

impl Wal {
    /// Opens (or creates) the log, replays it and truncates any torn tail.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Replay)> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .at(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).at(path)?;
        let replay = replay_bytes(&bytes);
        if replay.torn_bytes > 0 {
            tracing::warn!(
                path = %path.display(),
                torn = replay.torn_bytes,
                "discarding torn write-ahead log tail"
            );
            file.set_len(replay.valid_len).at(path)?;
            file.sync_all().at(path)?;
        }
        file.seek(SeekFrom::Start(replay.valid_len)).at(path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                len: replay.valid_len,
                sync,
            },
            replay,
        ))
    }

    pub fn len_bytes(&self) -> u64 {
        self.len
    }

    /// Appends one record and, when syncing is enabled, waits for it to reach
    /// stable storage.
    pub fn append(&mut self, points: &[WalPoint]) -> Result<()> {
        let record = encode_record(points);
        self.file.write_all(&record).at(&self.path)?;
        if self.sync {
            self.file.sync_data().at(&self.path)?;
        }
        self.len += record.len() as u64;
        Ok(())
    }

    /// Empties the log after its contents were folded into segments.
    pub fn reset(&mut self) -> Result<()> {
        self.file.set_len(0).at(&self.path)?;
        self.file.seek(SeekFrom::Start(0)).at(&self.path)?;
        self.file.sync_all().at(&self.path)?;
        self.len = 0;
        Ok(())
    }
}

pub fn encode_record(points: &[WalPoint]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(5 + points.len() * POINT_LEN);
    payload.push(RECORD_POINTS);
    payload.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        payload.extend_from_slice(&p.phenomenon_time.to_le_bytes());
        payload.extend_from_slice(&p.value.to_le_bytes());
        payload.extend_from_slice(&p.result_time.to_le_bytes());
        payload.extend_from_slice(&p.id.to_le_bytes());
    }
    let mut out = Vec::with_capacity(8 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn decode_payload(payload: &[u8]) -> Option<Vec<WalPoint>> {
    let (&kind, rest) = payload.split_first()?;
    if kind != RECORD_POINTS || rest.len() < 4 {
        return None;
    }
    let count = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let body = &rest[4..];
    if body.len() != count * POINT_LEN {
        return None;
    }
    Some(
        body.chunks_exact(POINT_LEN)
            .map(|c| WalPoint {
                phenomenon_time: i64::from_le_bytes(c[0..8].try_into().unwrap()),
                value: f64::from_le_bytes(c[8..16].try_into().unwrap()),
                result_time: i64::from_le_bytes(c[16..24].try_into().unwrap()),
                id: u64::from_le_bytes(c[24..32].try_into().unwrap()),
            })
            .collect(),
    )
}

pub fn replay_bytes(bytes: &[u8]) -> Replay {
    let mut replay = Replay::default();
    let mut pos = 0usize;
    while bytes.len() - pos >= 8 {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let Some(payload) = bytes.get(pos + 8..pos + 8 + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Some(points) = decode_payload(payload) else {
            break;
        };
        replay.points.extend(points);
        pos += 8 + len;
    }
    replay.valid_len = pos as u64;
    replay.torn_bytes = (bytes.len() - pos) as u64;
    replay
}
