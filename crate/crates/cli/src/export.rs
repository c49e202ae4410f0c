//! Whole-datastream exports to stdout.

use std::io::Write;

use fairstream_core::{Platform, PlatformSource};
use fairstream_qc::FlagScheme;
use fairstream_sta::serialize::flag_label;
use fairstream_sta::{format_time, StaService};
use fairstream_store::RangeQuery;
use serde_json::Value;

use crate::error::CliError;

/// `phenomenon_time,result,flag`, oldest first.
pub fn write_csv(platform: &Platform, datastream: u64, scheme: FlagScheme, out: impl Write) -> Result<(), CliError> {
    platform.datastream(datastream)?;
    let rows = platform
        .store()
        .query_range(datastream, RangeQuery::all().with_flags())
        .map_err(fairstream_core::PlatformError::from)?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["phenomenon_time", "result", "flag"])?;
    for row in rows {
        writer.write_record([
            format_time(row.phenomenon_time),
            row.result.to_string(),
            flag_label(row.flag.unwrap_or(fairstream_qc::UNFLAGGED), scheme),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// The observations of `datastream` exactly as the STA endpoint pages them
/// (time ascending), concatenated into a single `{"value": [...]}`.
pub fn sta_json(platform: &Platform, datastream: u64, scheme: FlagScheme) -> Result<Value, CliError> {
    platform.datastream(datastream)?;
    let source = PlatformSource::all(platform);
    let base = platform.base_url();
    let service = StaService::new(&source, base);
    let prefix = format!("{base}/v1.1/");

    let mut path = format!("Datastreams({datastream})/Observations");
    let mut query = format!(
        "$orderby=phenomenonTime%20asc&$top={}&flag_scheme={}",
        service.max_top,
        scheme.as_str()
    );
    let mut values = Vec::new();
    loop {
        let page = service.get(&path, &query).map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(items) = page.get("value").and_then(Value::as_array) {
            values.extend(items.iter().cloned());
        }
        let Some(next) = page.get("@iot.nextLink").and_then(Value::as_str) else {
            break;
        };
        let (next_path, next_query) = next
            .strip_prefix(&prefix)
            .and_then(|rest| rest.split_once('?'))
            .ok_or_else(|| CliError::Runtime(format!("unexpected next link {next}")))?;
        path = next_path.to_string();
        query = next_query.to_string();
    }
    Ok(serde_json::json!({ "value": values }))
}
