//! Watched drop directory, standing in for a file-transfer landing zone.
//!
//! Layout: `<dropdir>/<thing_uuid>/<file>`. Files are handled in
//! lexicographic name order and then moved to `processed/`, or to `failed/`
//! with a `<file>.err` sidecar. A name already present in either is a
//! duplicate and is moved to `duplicates/` unprocessed. Dot files and
//! `*.part` files are still being written and are left alone.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use uuid::Uuid;

use crate::{IngestError, IngestSink, PushSummary, Transport};

pub const PROCESSED: &str = "processed";
pub const FAILED: &str = "failed";
pub const DUPLICATES: &str = "duplicates";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FileStatus {
    Processed(PushSummary),
    Failed { reason: String },
    Duplicate,
    /// Transient write failure; the file stays in place for the next scan.
    Retry { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileReport {
    pub thing: Uuid,
    pub file: String,
    #[serde(flatten)]
    pub status: FileStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    pub files: Vec<FileReport>,
}

fn sorted_entries(dir: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Ok(name) = entry.file_name().into_string() {
            out.push((name, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn is_pending(name: &str) -> bool {
    name.starts_with('.') || name.ends_with(".part")
}

/// First free path `dir/name`, `dir/name.1`, ...
fn free_target(dir: &Path, name: &str) -> PathBuf {
    let mut target = dir.join(name);
    let mut n = 1;
    while target.exists() {
        target = dir.join(format!("{name}.{n}"));
        n += 1;
    }
    target
}

/// Processes every waiting file once.
pub fn scan_dropdir<S: IngestSink + ?Sized>(root: &Path, sink: &S) -> io::Result<DropReport> {
    let mut report = DropReport::default();
    if !root.exists() {
        return Ok(report);
    }
    for (dir_name, dir) in sorted_entries(root)? {
        let Ok(thing) = Uuid::parse_str(&dir_name) else {
            continue;
        };
        if !dir.is_dir() {
            continue;
        }
        let (processed, failed, duplicates) =
            (dir.join(PROCESSED), dir.join(FAILED), dir.join(DUPLICATES));
        for (name, path) in sorted_entries(&dir)? {
            if is_pending(&name) || !path.is_file() {
                continue;
            }
            if processed.join(&name).exists() || failed.join(&name).exists() {
                fs::create_dir_all(&duplicates)?;
                fs::rename(&path, free_target(&duplicates, &name))?;
                report.files.push(FileReport { thing, file: name, status: FileStatus::Duplicate });
                continue;
            }
            let bytes = fs::read(&path)?;
            let status = match sink.ingest(thing, Transport::Dropdir, &bytes) {
                Ok(summary) => {
                    fs::create_dir_all(&processed)?;
                    fs::rename(&path, processed.join(&name))?;
                    FileStatus::Processed(summary)
                }
                Err(IngestError::Sink(reason)) => FileStatus::Retry { reason },
                Err(e) => {
                    let reason = e.to_string();
                    fs::create_dir_all(&failed)?;
                    fs::write(failed.join(format!("{name}.err")), format!("{reason}\n"))?;
                    fs::rename(&path, failed.join(&name))?;
                    FileStatus::Failed { reason }
                }
            };
            report.files.push(FileReport { thing, file: name, status });
        }
    }
    Ok(report)
}
