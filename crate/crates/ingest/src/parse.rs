//! Payload parsing under a [`ParserProfile`].
//!
//! A data row is accepted whole or rejected whole: one bad cell rejects the
//! row with a [`RowError`], while empty cells are skipped silently.

use chrono::DateTime;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::profile::{ColumnRef, ParserProfile, PayloadKind, TimestampFormat};

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
/// Clock-skew allowance for timestamps ahead of the receiver's clock.
pub const MAX_FUTURE_SKEW_NS: i64 = 24 * 3600 * NANOS_PER_SECOND;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line of the payload.
    pub line: u64,
    /// `"timestamp"`, a value column, or `"row"` for structural problems.
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("PayloadUndecodable: {reason}")]
pub struct PayloadUndecodable {
    pub reason: String,
}

fn undecodable(reason: impl Into<String>) -> PayloadUndecodable {
    PayloadUndecodable {
        reason: reason.into(),
    }
}

/// Parsed payload, columnar per value column of the profile.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPayload {
    /// `series[k]` holds `(phenomenon_time_ns, value)` for
    /// `profile.value_columns[k]`, in payload order.
    pub series: Vec<Vec<(i64, f64)>>,
    pub errors: Vec<RowError>,
    /// Data rows seen, header lines and blank lines excluded.
    pub data_rows: usize,
    pub accepted_rows: usize,
}

impl ParsedPayload {
    pub fn point_count(&self) -> usize {
        self.series.iter().map(Vec::len).sum()
    }
}

/// Parses `bytes`. `now_ns` is the receiver's clock for the skew guard.
pub fn parse_payload(
    profile: &ParserProfile,
    bytes: &[u8],
    now_ns: i64,
) -> Result<ParsedPayload, PayloadUndecodable> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| undecodable(format!("not valid UTF-8 ({e})")))?;
    if text.contains('\0') {
        return Err(undecodable("contains NUL bytes"));
    }
    let latest = now_ns.saturating_add(MAX_FUTURE_SKEW_NS);
    let mut out = ParsedPayload {
        series: vec![Vec::new(); profile.value_columns.len()],
        ..ParsedPayload::default()
    };
    match profile.kind {
        PayloadKind::Csv => parse_csv(profile, text, latest, &mut out)?,
        PayloadKind::JsonLines => parse_json_lines(profile, text, latest, &mut out)?,
    }
    Ok(out)
}

/// Per-row staging so a rejected row leaves no trace.
struct RowBuffer {
    cells: Vec<(usize, f64)>,
}

impl RowBuffer {
    fn commit(&mut self, t: i64, out: &mut ParsedPayload) {
        for (k, v) in self.cells.drain(..) {
            out.series[k].push((t, v));
        }
        out.accepted_rows += 1;
    }
}

fn row_error(line: u64, field: &str, message: impl Into<String>) -> RowError {
    RowError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_range(t: i64, latest: i64) -> Result<i64, String> {
    if t < 0 || t > latest {
        Err("outside [1970-01-01, now + 24h]".into())
    } else {
        Ok(t)
    }
}

/// `[+-]digits[.digits]` scaled by `10^scale` without floating-point error.
fn parse_scaled(text: &str, scale: u32) -> Option<i64> {
    let (neg, body) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty()
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    if frac.len() > scale as usize && frac.bytes().skip(scale as usize).any(|b| b != b'0') {
        return None;
    }
    let unit = 10i64.pow(scale);
    let whole: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut frac_value = 0i64;
    for (i, b) in frac.bytes().take(scale as usize).enumerate() {
        frac_value += i64::from(b - b'0') * 10i64.pow(scale - 1 - i as u32);
    }
    let v = whole.checked_mul(unit)?.checked_add(frac_value)?;
    Some(if neg { -v } else { v })
}

pub fn parse_timestamp(text: &str, format: TimestampFormat) -> Result<i64, String> {
    let text = text.trim();
    let nanos = match format {
        TimestampFormat::Rfc3339 => DateTime::parse_from_rfc3339(text)
            .ok()
            .and_then(|d| d.timestamp_nanos_opt()),
        TimestampFormat::EpochSeconds => parse_scaled(text, 9),
        TimestampFormat::EpochMillis => parse_scaled(text, 6),
    };
    nanos.ok_or_else(|| format!("cannot parse {text:?} as {format:?}"))
}

fn parse_value(text: &str) -> Result<f64, String> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("{text:?} is not a finite number")),
        Err(_) => Err(format!("{text:?} is not a number")),
    }
}

fn parse_csv(
    profile: &ParserProfile,
    text: &str,
    latest: i64,
    out: &mut ParsedPayload,
) -> Result<(), PayloadUndecodable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(profile.delimiter as u8)
        .from_reader(text.as_bytes());
    let mut record = csv::StringRecord::new();
    let mut header: Option<csv::StringRecord> = None;
    let mut skipped = 0u32;
    // Column indices, resolved once the header (if any) is known.
    let mut resolved: Option<(usize, Vec<usize>)> = None;
    let mut buf = RowBuffer { cells: Vec::new() };
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.data_rows += 1;
                out.errors.push(row_error(line, "row", e.to_string()));
                continue;
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        if skipped < profile.skip_header_lines {
            if skipped == 0 {
                header = Some(record.clone());
            }
            skipped += 1;
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let (ts_idx, value_idx) = match &resolved {
            Some(r) => r,
            None => resolved.insert(resolve_csv_columns(profile, header.as_ref())?),
        };
        out.data_rows += 1;
        let Some(ts_cell) = record.get(*ts_idx) else {
            out.errors.push(row_error(line, "timestamp", "missing column"));
            continue;
        };
        let t = match parse_timestamp(ts_cell, profile.timestamp_format)
            .and_then(|t| check_range(t, latest))
        {
            Ok(t) => t,
            Err(m) => {
                out.errors.push(row_error(line, "timestamp", m));
                continue;
            }
        };
        buf.cells.clear();
        let mut failed = None;
        for (k, idx) in value_idx.iter().enumerate() {
            let column = &profile.value_columns[k].column;
            match record.get(*idx) {
                None => {
                    failed = Some(row_error(line, &column.to_string(), "missing column"));
                    break;
                }
                Some(cell) if cell.trim().is_empty() => {}
                Some(cell) => match parse_value(cell) {
                    Ok(v) => buf.cells.push((k, v)),
                    Err(m) => {
                        failed = Some(row_error(line, &column.to_string(), m));
                        break;
                    }
                },
            }
        }
        match failed {
            Some(err) => out.errors.push(err),
            None => buf.commit(t, out),
        }
    }
    Ok(())
}

fn resolve_csv_columns(
    profile: &ParserProfile,
    header: Option<&csv::StringRecord>,
) -> Result<(usize, Vec<usize>), PayloadUndecodable> {
    let resolve = |c: &ColumnRef| match c {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(n) => header
            .and_then(|h| h.iter().position(|cell| cell.trim() == n))
            .ok_or_else(|| undecodable(format!("header has no column {n:?}"))),
    };
    let ts = resolve(&profile.timestamp_column)?;
    let values = profile
        .value_columns
        .iter()
        .map(|v| resolve(&v.column))
        .collect::<Result<_, _>>()?;
    Ok((ts, values))
}

fn json_key(c: &ColumnRef) -> String {
    match c {
        ColumnRef::Name(n) => n.clone(),
        ColumnRef::Index(i) => i.to_string(),
    }
}

fn parse_json_lines(
    profile: &ParserProfile,
    text: &str,
    latest: i64,
    out: &mut ParsedPayload,
) -> Result<(), PayloadUndecodable> {
    let ts_key = json_key(&profile.timestamp_column);
    let value_keys: Vec<String> = profile.value_columns.iter().map(|v| json_key(&v.column)).collect();
    let mut buf = RowBuffer { cells: Vec::new() };
    let mut objects = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        if i < profile.skip_header_lines as usize || raw.trim().is_empty() {
            continue;
        }
        out.data_rows += 1;
        let obj: Map<String, Value> = match serde_json::from_str(raw) {
            Ok(o) => o,
            Err(e) => {
                out.errors.push(row_error(line, "row", format!("not a JSON object: {e}")));
                continue;
            }
        };
        objects += 1;
        let t = match obj.get(&ts_key) {
            None | Some(Value::Null) => Err("missing".to_string()),
            Some(Value::String(s)) => parse_timestamp(s, profile.timestamp_format),
            Some(Value::Number(n)) if profile.timestamp_format != TimestampFormat::Rfc3339 => {
                parse_timestamp(&n.to_string(), profile.timestamp_format)
            }
            Some(other) => Err(format!("unexpected {other}")),
        }
        .and_then(|t| check_range(t, latest));
        let t = match t {
            Ok(t) => t,
            Err(m) => {
                out.errors.push(row_error(line, "timestamp", m));
                continue;
            }
        };
        buf.cells.clear();
        let mut failed = None;
        for (k, key) in value_keys.iter().enumerate() {
            match obj.get(key) {
                None | Some(Value::Null) => {}
                Some(Value::Number(n)) => match n.as_f64().filter(|v| v.is_finite()) {
                    Some(v) => buf.cells.push((k, v)),
                    None => {
                        failed = Some(row_error(line, key, "not a finite number"));
                        break;
                    }
                },
                Some(Value::String(s)) if s.trim().is_empty() => {}
                Some(Value::String(s)) => match parse_value(s) {
                    Ok(v) => buf.cells.push((k, v)),
                    Err(m) => {
                        failed = Some(row_error(line, key, m));
                        break;
                    }
                },
                Some(other) => {
                    failed = Some(row_error(line, key, format!("unexpected {other}")));
                    break;
                }
            }
        }
        match failed {
            Some(err) => out.errors.push(err),
            None => buf.commit(t, out),
        }
    }
    if out.data_rows > 0 && objects == 0 {
        return Err(undecodable("no line is a JSON object"));
    }
    Ok(())
}
