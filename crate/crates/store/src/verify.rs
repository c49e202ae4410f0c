//! Offline consistency check of a data directory (`fsck`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::flags::FlagColumn;
use crate::segment;
use crate::wal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Problem {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub datastreams: usize,
    pub segments: usize,
    pub points: u64,
    pub flag_columns: usize,
    pub wal_bytes: u64,
    pub problems: Vec<Problem>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }

    fn problem(&mut self, path: &Path, reason: impl Into<String>) {
        self.problems.push(Problem {
            path: path.to_path_buf(),
            reason: reason.into(),
        });
    }
}

/// Checks every segment (magic, version, length, crc, ordering, bounds,
/// file name), every sidecar and flag column, and that each write-ahead log
/// consists of whole records.
pub fn verify_data_dir(data_dir: &Path) -> std::io::Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let ds_root = data_dir.join("ds");
    if !ds_root.is_dir() {
        return Ok(report);
    }
    let mut dirs: Vec<_> = fs::read_dir(&ds_root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    dirs.sort_by_key(|e| e.file_name());

    for entry in dirs {
        let dir = entry.path();
        let Some(ds_id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) else {
            report.problem(&dir, "unexpected entry in datastream root");
            continue;
        };
        report.datastreams += 1;
        verify_segments(&mut report, ds_id, &dir.join("seg"))?;
        verify_flags(&mut report, ds_id, &dir.join("flags"))?;

        let wal_path = dir.join("wal.log");
        if wal_path.exists() {
            let bytes = fs::read(&wal_path)?;
            let replay = wal::replay_bytes(&bytes);
            report.wal_bytes += replay.valid_len;
            if replay.torn_bytes > 0 {
                report.problem(
                    &wal_path,
                    format!("{} trailing bytes do not form a record", replay.torn_bytes),
                );
            }
        }
    }
    Ok(report)
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    paths.sort();
    Ok(paths)
}

fn verify_segments(report: &mut VerifyReport, ds_id: u64, seg_dir: &Path) -> std::io::Result<()> {
    let mut ranges = Vec::new();
    for path in sorted_entries(seg_dir)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".fsr") {
            continue;
        }
        let Some((t_min, t_max)) = segment::parse_file_name(name) else {
            report.problem(&path, "unexpected file in segment directory");
            continue;
        };
        report.segments += 1;
        let bytes = fs::read(&path)?;
        let seg = match segment::decode(&path, &bytes) {
            Ok(seg) => seg,
            Err(e) => {
                report.problem(&path, reason_of(e));
                continue;
            }
        };
        if seg.header.datastream_id != ds_id {
            report.problem(
                &path,
                format!(
                    "segment belongs to datastream {} but lives under {ds_id}",
                    seg.header.datastream_id
                ),
            );
        }
        if (seg.header.t_min, seg.header.t_max) != (t_min, t_max) {
            report.problem(&path, "file name does not match t_min/t_max");
        }
        report.points += u64::from(seg.header.count);
        ranges.push((t_min, t_max, path.clone()));

        let sc_path = seg_dir.join(segment::sidecar_name(t_min, t_max));
        match fs::read(&sc_path) {
            Ok(b) => {
                if let Err(e) = segment::decode_sidecar(&sc_path, &b, seg.timestamps.len()) {
                    report.problem(&sc_path, reason_of(e));
                }
            }
            Err(_) => report.problem(&sc_path, "missing sidecar"),
        }
    }
    ranges.sort();
    for w in ranges.windows(2) {
        if w[0].1 >= w[1].0 {
            report.problem(&w[1].2, format!("overlaps {}", w[0].2.display()));
        }
    }
    Ok(())
}

fn verify_flags(report: &mut VerifyReport, ds_id: u64, flag_dir: &Path) -> std::io::Result<()> {
    for path in sorted_entries(flag_dir)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let Some(cid) = name
            .strip_suffix(".ffc")
            .and_then(|s| s.parse::<u64>().ok())
        else {
            report.problem(&path, "unexpected file in flag directory");
            continue;
        };
        report.flag_columns += 1;
        let bytes = fs::read(&path)?;
        match FlagColumn::decode(&path, &bytes) {
            Ok(col) if col.column_id != cid || col.datastream_id != ds_id => {
                report.problem(&path, "column header does not match its location")
            }
            Ok(_) => {}
            Err(e) => report.problem(&path, reason_of(e)),
        }
    }
    Ok(())
}

fn reason_of(e: crate::StoreError) -> String {
    match e {
        crate::StoreError::Corrupt { reason, .. } => reason,
        other => other.to_string(),
    }
}
