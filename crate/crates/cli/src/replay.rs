//! Offline replay of a logger file through the regular ingest path.

use std::thread;
use std::time::Duration;

use fairstream_core::platform::now_ns;
use fairstream_core::{Platform, PlatformError};
use fairstream_ingest::{parse_payload, PayloadKind, PushSummary};
use uuid::Uuid;

use crate::error::CliError;

/// Ingests `payload` for `thing`. With `speed > 0` rows are sent one at a
/// time, spaced by their timestamp differences divided by `speed`.
pub fn replay(platform: &Platform, thing: Uuid, payload: &[u8], speed: f64) -> Result<PushSummary, CliError> {
    if speed <= 0.0 {
        return Ok(platform.ingest_payload(thing, payload).map_err(PlatformError::from)?);
    }
    let profile = platform.thing(thing)?.parser_profile;
    let header_lines = match profile.kind {
        PayloadKind::Csv => profile.skip_header_lines as usize,
        PayloadKind::JsonLines => 0,
    };
    let lines: Vec<&[u8]> = payload.split_inclusive(|&b| b == b'\n').collect();
    let header: Vec<u8> = lines.iter().take(header_lines).flat_map(|l| l.iter().copied()).collect();

    let mut total = PushSummary::default();
    let mut previous: Option<i64> = None;
    for (index, line) in lines.iter().enumerate().skip(header_lines) {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let mut chunk = header.clone();
        chunk.extend_from_slice(line);
        let first_time = parse_payload(&profile, &chunk, now_ns())
            .ok()
            .and_then(|p| p.series.iter().flatten().map(|&(t, _)| t).min());
        if let (Some(prev), Some(t)) = (previous, first_time) {
            let wait = t.saturating_sub(prev).max(0) as f64 / speed;
            thread::sleep(Duration::from_nanos(wait.min(u64::MAX as f64) as u64));
        }
        previous = first_time.or(previous);

        let summary = platform.ingest_payload(thing, &chunk).map_err(PlatformError::from)?;
        total.accepted += summary.accepted;
        // Errors refer to the one-row chunk; map them back to file lines.
        total.errors.extend(summary.errors.into_iter().map(|mut e| {
            e.line = e.line - header_lines as u64 + index as u64;
            e
        }));
    }
    Ok(total)
}
