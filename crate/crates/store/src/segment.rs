//! On-disk segment format.
//!
//! A segment holds one datastream's points for a closed time range, sorted by
//! timestamp. Layout (little-endian throughout):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FSG1"
//! 4       2     version (u16)
//! 6       8     datastream_id (u64)
//! 14      4     count (u32)
//! 18      8     t_min (i64)
//! 26      8     t_max (i64)
//! 34      4     crc32 of payload
//! 38      8*n   timestamps (i64, strictly ascending)
//! 38+8n   8*n   values (f64)
//! ```
//!
//! Result times and observation ids live in a sidecar file next to the
//! segment (`.fsr`) so the segment layout itself stays fixed.

use std::path::Path;

use crate::error::{Result, StoreError};

pub const SEGMENT_MAGIC: &[u8; 4] = b"FSG1";
pub const SEGMENT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 38;

pub const SIDECAR_MAGIC: &[u8; 4] = b"FSR1";
const SIDECAR_HEADER_LEN: usize = 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentHeader {
    pub version: u16,
    pub datastream_id: u64,
    pub count: u32,
    pub t_min: i64,
    pub t_max: i64,
    pub crc32: u32,
}

/// Decoded segment contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentData {
    pub header: SegmentHeader,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
}

/// Per-point columns that do not belong to the fixed segment layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidecarData {
    pub result_times: Vec<i64>,
    pub ids: Vec<u64>,
}

/// File name used for a segment covering `[t_min, t_max]`.
pub fn file_name(t_min: i64, t_max: i64) -> String {
    format!("{t_min}-{t_max}.fsg")
}

pub fn sidecar_name(t_min: i64, t_max: i64) -> String {
    format!("{t_min}-{t_max}.fsr")
}

/// Parses `<t_min>-<t_max>.fsg`. Negative timestamps make the dash ambiguous,
/// so the split point is searched from the left after an optional sign.
pub fn parse_file_name(name: &str) -> Option<(i64, i64)> {
    let stem = name.strip_suffix(".fsg")?;
    let skip = usize::from(stem.starts_with('-'));
    let dash = stem[skip..].find('-')? + skip;
    let t_min = stem[..dash].parse().ok()?;
    let t_max = stem[dash + 1..].parse().ok()?;
    Some((t_min, t_max))
}

/// Encodes a segment. Timestamps must be strictly ascending and non-empty.
pub fn encode(datastream_id: u64, timestamps: &[i64], values: &[f64]) -> Vec<u8> {
    assert_eq!(timestamps.len(), values.len());
    assert!(!timestamps.is_empty(), "segments are never empty");
    debug_assert!(timestamps.windows(2).all(|w| w[0] < w[1]));

    let count = timestamps.len();
    let mut payload = Vec::with_capacity(count * 16);
    for t in timestamps {
        payload.extend_from_slice(&t.to_le_bytes());
    }
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(SEGMENT_MAGIC);
    out.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
    out.extend_from_slice(&datastream_id.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&timestamps[0].to_le_bytes());
    out.extend_from_slice(&timestamps[count - 1].to_le_bytes());
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn corrupt(path: &Path, reason: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes(b.try_into().unwrap())
}
fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}
fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().unwrap())
}
fn le_i64(b: &[u8]) -> i64 {
    i64::from_le_bytes(b.try_into().unwrap())
}

pub fn decode_header(path: &Path, bytes: &[u8]) -> Result<SegmentHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(
            path,
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[0..4] != SEGMENT_MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = le_u16(&bytes[4..6]);
    if version != SEGMENT_VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    Ok(SegmentHeader {
        version,
        datastream_id: le_u64(&bytes[6..14]),
        count: le_u32(&bytes[14..18]),
        t_min: le_i64(&bytes[18..26]),
        t_max: le_i64(&bytes[26..34]),
        crc32: le_u32(&bytes[34..38]),
    })
}

/// Decodes and fully verifies a segment: magic, version, length, crc,
/// strict ordering and header bounds.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<SegmentData> {
    let header = decode_header(path, bytes)?;
    let count = header.count as usize;
    let expected = HEADER_LEN + count * 16;
    if bytes.len() != expected {
        return Err(corrupt(
            path,
            format!(
                "length mismatch: header says {count} points ({expected} bytes), file has {} bytes",
                bytes.len()
            ),
        ));
    }
    if count == 0 {
        return Err(corrupt(path, "empty segment"));
    }
    let payload = &bytes[HEADER_LEN..];
    let crc = crc32fast::hash(payload);
    if crc != header.crc32 {
        return Err(corrupt(
            path,
            format!(
                "crc mismatch: header {:08x}, payload {crc:08x}",
                header.crc32
            ),
        ));
    }
    let (ts_bytes, val_bytes) = payload.split_at(count * 8);
    let timestamps: Vec<i64> = ts_bytes.chunks_exact(8).map(le_i64).collect();
    let values: Vec<f64> = val_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    if let Some(i) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
        return Err(corrupt(
            path,
            format!("timestamps not strictly ascending at index {}", i + 1),
        ));
    }
    if timestamps[0] != header.t_min || timestamps[count - 1] != header.t_max {
        return Err(corrupt(path, "t_min/t_max do not match payload"));
    }
    Ok(SegmentData {
        header,
        timestamps,
        values,
    })
}

pub fn encode_sidecar(result_times: &[i64], ids: &[u64]) -> Vec<u8> {
    assert_eq!(result_times.len(), ids.len());
    let mut payload = Vec::with_capacity(result_times.len() * 16);
    for t in result_times {
        payload.extend_from_slice(&t.to_le_bytes());
    }
    for id in ids {
        payload.extend_from_slice(&id.to_le_bytes());
    }
    let mut out = Vec::with_capacity(SIDECAR_HEADER_LEN + payload.len());
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&(result_times.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_sidecar(path: &Path, bytes: &[u8], expected_count: usize) -> Result<SidecarData> {
    if bytes.len() < SIDECAR_HEADER_LEN || &bytes[0..4] != SIDECAR_MAGIC {
        return Err(corrupt(path, "bad sidecar header"));
    }
    let count = le_u32(&bytes[4..8]) as usize;
    if count != expected_count {
        return Err(corrupt(
            path,
            format!("sidecar holds {count} points, segment {expected_count}"),
        ));
    }
    let payload = &bytes[SIDECAR_HEADER_LEN..];
    if payload.len() != count * 16 {
        return Err(corrupt(path, "sidecar length mismatch"));
    }
    if crc32fast::hash(payload) != le_u32(&bytes[8..12]) {
        return Err(corrupt(path, "sidecar crc mismatch"));
    }
    let (rt, ids) = payload.split_at(count * 8);
    Ok(SidecarData {
        result_times: rt.chunks_exact(8).map(le_i64).collect(),
        ids: ids.chunks_exact(8).map(le_u64).collect(),
    })
}
