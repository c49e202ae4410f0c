//! QC attachments and their execution against stored data.
//!
//! A run loads a time window of every variable the config touches, with each
//! point's current flag as seen without the columns of the config being run,
//! so re-running a config over an overlap recomputes its own results instead
//! of compounding them. Output is persisted in pipeline order: derived
//! series, value updates, then the entry's flag column.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{SecondsFormat, Utc};
use fairstream_qc::{
    run_pipeline, FlagScheme, PipelineOutput, QcConfig, QcFunction, QcRunReport, RunContext,
    Series, Workspace, UNFLAGGED,
};
use fairstream_sta::format_time;
use fairstream_store::{FlagMeta, NewPoint, Order, RangeQuery};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use tokio::sync::Notify;
use tracing::{info, warn};
use uuid::Uuid;

use crate::error::{PlatformError, Result};
use crate::platform::{now_ns, positions_of, Platform};
use crate::state::{DatastreamDecl, DerivedFrom, QcAttachment, QcScope, Schedule};

/// Points sampled to estimate a datastream's sampling period.
const SAMPLING_PROBE: usize = 33;

#[derive(Default)]
pub struct QcScheduler {
    /// Attachment id to the oldest phenomenon time written since its last run.
    pending: Mutex<BTreeMap<u64, i64>>,
    run_locks: Mutex<HashMap<u64, Arc<Mutex<()>>>>,
    wake: Notify,
}

impl QcScheduler {
    fn lock_for(&self, attachment: u64) -> Arc<Mutex<()>> {
        self.run_locks.lock().entry(attachment).or_default().clone()
    }
}

fn default_schedule() -> Schedule {
    Schedule::OnIngest
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachSpec {
    pub config: String,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Humantime duration, e.g. `"6h"`.
    #[serde(default)]
    pub lookback: Option<String>,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

/// Result of a run: the report (column ids filled in when persisted) and
/// the workspace as the pipeline left it.
pub struct RunOutcome {
    pub report: QcRunReport,
    pub output: PipelineOutput,
    pub workspace: Workspace,
}

pub fn attachment_view(a: &QcAttachment) -> Value {
    json!({
        "id": a.id,
        "scope": a.scope,
        "thing_uuid": a.thing_uuid,
        "config": a.config_text,
        "config_hash": a.config_hash,
        "schedule": a.schedule,
        "lookback": a.lookback_ns.map(|ns| humantime::format_duration(Duration::from_nanos(ns as u64)).to_string()),
        "enabled": a.enabled,
        "high_water_mark": a.high_water_mark.map(format_time),
        "created_at": a.created_at,
    })
}

fn parse_lookback(text: &str) -> Result<i64> {
    let d = humantime::parse_duration(text)
        .map_err(|e| PlatformError::validation("lookback", e.to_string()))?;
    i64::try_from(d.as_nanos())
        .ok()
        .filter(|ns| *ns > 0)
        .ok_or_else(|| PlatformError::validation("lookback", "out of range"))
}

/// Largest time span of context any entry needs.
pub fn max_context_span(config: &QcConfig, sampling_period: i64) -> i64 {
    config
        .entries
        .iter()
        .map(|e| e.function.context_span(sampling_period))
        .max()
        .unwrap_or(0)
}

/// Context span of the whole config: an entry masks points for the entries
/// after it, so their spans add up.
pub fn chained_context_span(config: &QcConfig, sampling_period: i64) -> i64 {
    config
        .entries
        .iter()
        .map(|e| e.function.context_span(sampling_period))
        .fold(0i64, i64::saturating_add)
}

fn config_error(line: usize, message: impl Into<String>) -> PlatformError {
    PlatformError::QcConfig {
        line,
        message: message.into(),
    }
}

impl Platform {
    /// Parses and checks a config against the variables of `thing`.
    pub fn check_qc_config(&self, thing: Uuid, text: &str) -> Result<QcConfig> {
        let config = QcConfig::parse(text)?;
        let decls: Vec<DatastreamDecl> =
            self.read_state(|s| s.thing_datastreams(thing).cloned().collect());
        let names: Vec<&str> = decls.iter().map(|d| d.position.as_str()).collect();
        config.validate_variables(&names)?;
        for e in &config.entries {
            if let QcFunction::Resample { .. } = e.function {
                let name = e.function.derived_name(&e.variable);
                let clash = decls
                    .iter()
                    .find(|d| d.position == name)
                    .filter(|d| d.derived_from.is_none());
                if clash.is_some() {
                    return Err(config_error(
                        e.line,
                        format!("derived series {name:?} would overwrite a measured datastream"),
                    ));
                }
            }
        }
        Ok(config)
    }

    fn sampling_period(&self, datastreams: &[u64]) -> i64 {
        let mut diffs = Vec::new();
        for ds in datastreams {
            let q = RangeQuery::all().order(Order::Desc).page(Some(SAMPLING_PROBE), 0);
            if let Ok(points) = self.store().query_range(*ds, q) {
                diffs.extend(points.windows(2).map(|w| w[0].phenomenon_time - w[1].phenomenon_time));
            }
        }
        diffs.sort_unstable();
        diffs.get(diffs.len() / 2).copied().unwrap_or(0)
    }

    fn scope_datastreams(&self, a: &QcAttachment) -> Vec<u64> {
        match a.scope {
            QcScope::Datastream(id) => vec![id],
            QcScope::Thing(uuid) => self.read_state(|s| {
                s.things.get(&uuid).map(|t| t.datastreams.clone()).unwrap_or_default()
            }),
        }
    }

    /// Lookback of a run: the explicit value, else twice the chained
    /// context span of the config at the observed sampling period.
    fn effective_lookback(&self, config: &QcConfig, explicit: Option<i64>, triggers: &[u64]) -> i64 {
        explicit.unwrap_or_else(|| chained_context_span(config, self.sampling_period(triggers)).saturating_mul(2))
    }

    /// Attaches a config to a Thing or datastream. An enabled attachment runs
    /// once right away over the data already stored.
    pub fn attach_qc(&self, scope: QcScope, spec: AttachSpec) -> Result<(Value, Option<QcRunReport>)> {
        let thing = match scope {
            QcScope::Thing(uuid) => self.thing(uuid)?.uuid,
            QcScope::Datastream(id) => self.datastream(id)?.thing_uuid,
        };
        let config = self.check_qc_config(thing, &spec.config)?;
        let lookback_ns = spec.lookback.as_deref().map(parse_lookback).transpose()?;
        if let Some(lb) = lookback_ns {
            let probe = QcAttachment {
                id: 0,
                scope,
                thing_uuid: thing,
                config_text: String::new(),
                config_hash: String::new(),
                schedule: spec.schedule,
                lookback_ns: None,
                enabled: false,
                high_water_mark: None,
                created_at: Utc::now(),
            };
            let needed = max_context_span(&config, self.sampling_period(&self.scope_datastreams(&probe)));
            if lb < needed {
                return Err(PlatformError::validation(
                    "lookback",
                    format!(
                        "must be at least {} for this config",
                        humantime::format_duration(Duration::from_nanos(needed as u64))
                    ),
                ));
            }
        }
        let attachment = self.mutate(|s| {
            let id = s.next_attachment_id;
            s.next_attachment_id += 1;
            let a = QcAttachment {
                id,
                scope,
                thing_uuid: thing,
                config_text: spec.config.clone(),
                config_hash: config.config_hash.clone(),
                schedule: spec.schedule,
                lookback_ns,
                enabled: spec.enabled,
                high_water_mark: None,
                created_at: Utc::now(),
            };
            s.attachments.insert(id, a.clone());
            Ok(a)
        })?;
        info!(attachment = attachment.id, thing = %thing, "qc config attached");
        let report = if attachment.enabled {
            self.run_attachment(attachment.id, None)?
        } else {
            None
        };
        let view = self.read_state(|s| attachment_view(&s.attachments[&attachment.id]));
        Ok((view, report))
    }

    pub fn set_attachment_enabled(&self, id: u64, enabled: bool) -> Result<Value> {
        self.mutate(|s| {
            let a = s.attachments.get_mut(&id).ok_or(PlatformError::UnknownAttachment(id))?;
            a.enabled = enabled;
            Ok(attachment_view(a))
        })
    }

    pub fn attachment(&self, id: u64) -> Result<QcAttachment> {
        self.read_state(|s| s.attachments.get(&id).cloned())
            .ok_or(PlatformError::UnknownAttachment(id))
    }

    pub(crate) fn qc_notify_ingest(&self, thing: Uuid, touched: &[(u64, i64)]) {
        let due: Vec<(u64, i64)> = self.read_state(|s| {
            s.attachments
                .values()
                .filter(|a| a.enabled && a.thing_uuid == thing && a.schedule == Schedule::OnIngest)
                .filter_map(|a| {
                    touched
                        .iter()
                        .filter(|(ds, _)| match a.scope {
                            QcScope::Thing(_) => true,
                            QcScope::Datastream(id) => *ds == id,
                        })
                        .map(|(_, t)| *t)
                        .min()
                        .map(|t| (a.id, t))
                })
                .collect()
        });
        if due.is_empty() {
            return;
        }
        let mut pending = self.qc.pending.lock();
        for (id, t) in due {
            pending.entry(id).and_modify(|m| *m = (*m).min(t)).or_insert(t);
        }
        drop(pending);
        self.qc.wake.notify_one();
    }

    /// Resolves once on-ingest work has been queued.
    pub async fn qc_work_queued(&self) {
        self.qc.wake.notified().await;
    }

    pub fn has_pending_qc(&self) -> bool {
        !self.qc.pending.lock().is_empty()
    }

    /// Runs every queued on-ingest attachment, in parallel across
    /// attachments.
    pub fn run_pending_qc(&self) -> Vec<(u64, Result<Option<QcRunReport>>)> {
        let pending = std::mem::take(&mut *self.qc.pending.lock());
        std::thread::scope(|scope| {
            let handles: Vec<_> = pending
                .into_iter()
                .map(|(id, dirty)| (id, scope.spawn(move || self.run_attachment(id, Some(dirty)))))
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| {
                    let result = h.join().unwrap_or_else(|_| {
                        Err(PlatformError::validation("qc", "run panicked"))
                    });
                    if let Err(e) = &result {
                        warn!(attachment = id, error = %e, "qc run failed");
                    }
                    (id, result)
                })
                .collect()
        })
    }

    /// Runs interval attachments whose period has elapsed since their last
    /// run recorded in `last_runs`.
    pub fn run_due_intervals(&self, last_runs: &mut HashMap<u64, Instant>) {
        let now = Instant::now();
        let due: Vec<u64> = self.read_state(|s| {
            s.attachments
                .values()
                .filter(|a| a.enabled)
                .filter_map(|a| match a.schedule {
                    Schedule::Interval(every) => Some((a.id, every)),
                    Schedule::OnIngest => None,
                })
                .filter(|(id, every)| last_runs.get(id).is_none_or(|t| now.duration_since(*t) >= *every))
                .map(|(id, _)| id)
                .collect()
        });
        for id in due {
            last_runs.insert(id, now);
            if let Err(e) = self.run_attachment(id, None) {
                warn!(attachment = id, error = %e, "scheduled qc run failed");
            }
        }
    }

    /// One run of an attachment. `dirty` is the oldest time written since
    /// the last run; `None` means a wall-clock trigger. The window starts one
    /// lookback before the older of `dirty` and the high-water mark, and
    /// covers everything when there was no run yet.
    ///
    /// The first half of the lookback is context only. Results are written
    /// from its midpoint on, which re-covers the points that lacked right
    /// context when the previous run saw them at its edge.
    pub fn run_attachment(&self, id: u64, dirty: Option<i64>) -> Result<Option<QcRunReport>> {
        let lock = self.qc.lock_for(id);
        let _exclusive = lock.lock();
        let a = self.attachment(id)?;
        if !a.enabled {
            return Ok(None);
        }
        let config = self.check_qc_config(a.thing_uuid, &a.config_text)?;
        let triggers = self.scope_datastreams(&a);
        let mut newest = None;
        for ds in &triggers {
            if let Some((_, hi)) = self.store().time_bounds(*ds)? {
                newest = newest.max(Some(hi));
            }
        }
        let Some(newest) = newest else {
            return Ok(None);
        };
        if dirty.is_none() && a.high_water_mark.is_some_and(|h| newest <= h) {
            return Ok(None);
        }
        let (start, write_from) = match a.high_water_mark {
            None => (i64::MIN, i64::MIN),
            Some(h) => {
                let anchor = dirty.map_or(h.saturating_add(1), |d| d.min(h.saturating_add(1)));
                let lookback = self.effective_lookback(&config, a.lookback_ns, &triggers);
                let start = anchor.saturating_sub(lookback);
                (start, start.saturating_add(lookback / 2))
            }
        };
        let outcome = self.run_window(a.thing_uuid, &config, start, newest, Some(write_from))?;
        self.mutate(|s| {
            if let Some(att) = s.attachments.get_mut(&id) {
                att.high_water_mark = att.high_water_mark.max(Some(newest));
            }
            Ok(())
        })?;
        info!(
            attachment = id,
            evaluated = outcome.report.evaluated(),
            flagged = outcome.report.flagged(),
            "qc run finished"
        );
        Ok(Some(outcome.report))
    }

    /// Batch run of an ad-hoc config over `[from, to]` (inclusive) of the
    /// Thing owning `datastream`. Defaults cover all stored data.
    pub fn run_qc_batch(
        &self,
        datastream: u64,
        config_text: &str,
        from: Option<i64>,
        to: Option<i64>,
    ) -> Result<QcRunReport> {
        let thing = self.datastream(datastream)?.thing_uuid;
        let config = self.check_qc_config(thing, config_text)?;
        let (start, end) = self.default_window(datastream, from, to)?;
        Ok(self.run_window(thing, &config, start, end, Some(start))?.report)
    }

    fn default_window(&self, datastream: u64, from: Option<i64>, to: Option<i64>) -> Result<(i64, i64)> {
        let bounds = self.store().time_bounds(datastream)?;
        let end = to.or(bounds.map(|b| b.1)).unwrap_or(i64::MIN);
        Ok((from.unwrap_or(i64::MIN), end))
    }

    /// Runs a config without persisting anything and returns the report
    /// plus the resulting flags of the datastream and of derived series.
    pub fn qc_dryrun(
        &self,
        datastream: u64,
        config_text: &str,
        from: Option<i64>,
        to: Option<i64>,
        scheme: FlagScheme,
    ) -> Result<Value> {
        let decl = self.datastream(datastream)?;
        let config = self.check_qc_config(decl.thing_uuid, config_text)?;
        let (start, end) = self.default_window(datastream, from, to)?;
        let outcome = self.run_window(decl.thing_uuid, &config, start, end, None)?;
        let mut shown = vec![decl.position.clone()];
        shown.extend(outcome.output.entries.iter().filter_map(|e| e.derived.as_ref().map(|d| d.name.clone())));
        let mut series = Map::new();
        for name in shown {
            let Some(s) = outcome.workspace.get(&name) else {
                continue;
            };
            let points: Vec<Value> = (0..s.len())
                .map(|i| {
                    json!({
                        "phenomenonTime": format_time(s.timestamps[i]),
                        "result": s.values[i],
                        "flag": scheme.encode(s.flags[i]).unwrap_or_default(),
                    })
                })
                .collect();
            series.insert(name, Value::Array(points));
        }
        Ok(json!({ "report": outcome.report, "flag_scheme": scheme.as_str(), "series": series }))
    }

    /// Loads `[start, end]` of every variable the config touches, runs the
    /// pipeline and, given `write_from`, writes its output for points at or
    /// after that time.
    pub fn run_window(
        &self,
        thing: Uuid,
        config: &QcConfig,
        start: i64,
        end: i64,
        write_from: Option<i64>,
    ) -> Result<RunOutcome> {
        let mut positions = self.read_state(|s| positions_of(s, thing));
        let mut wanted: Vec<&str> = Vec::new();
        for e in &config.entries {
            wanted.push(&e.variable);
            wanted.extend(e.function.referenced_variables());
        }
        let mut workspace = Workspace::new();
        for name in wanted {
            let Some(&ds) = positions.get(name) else {
                continue;
            };
            if !workspace.contains_key(name) {
                workspace.insert(name.to_string(), self.load_series(ds, start, end, &config.config_hash)?);
            }
        }
        let run_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        let mut output = run_pipeline(config, &mut workspace, &RunContext::new(run_at)).map_err(|e| match e {
            fairstream_qc::PipelineError::UnknownVariable { line, name } => {
                config_error(line, format!("unknown variable {name:?}"))
            }
        })?;
        let mut report = output.report.clone();
        if let Some(from) = write_from {
            self.persist_output(thing, &mut positions, start.max(from), &mut output, &mut report)?;
        }
        Ok(RunOutcome {
            report,
            output,
            workspace,
        })
    }

    fn load_series(&self, ds: u64, start: i64, end: i64, own_hash: &str) -> Result<Series> {
        if start > end {
            return Ok(Series::default());
        }
        let points = self.store().query_range(ds, RangeQuery::new(start, end.saturating_add(1)))?;
        let timestamps: Vec<i64> = points.iter().map(|p| p.phenomenon_time).collect();
        let values: Vec<f64> = points.iter().map(|p| p.result).collect();
        let mut flags = vec![UNFLAGGED; timestamps.len()];
        if let (Some(&lo), Some(&hi)) = (timestamps.first(), timestamps.last()) {
            for column in self.store().flag_columns(ds)? {
                if column.meta.config_hash == own_hash {
                    continue;
                }
                let from = column.entries.partition_point(|e| e.0 < lo);
                for &(t, f) in column.entries[from..].iter().take_while(|e| e.0 <= hi) {
                    if let Ok(i) = timestamps.binary_search(&t) {
                        flags[i] = f;
                    }
                }
            }
        }
        Ok(Series::with_flags(timestamps, values, flags))
    }

    fn persist_output(
        &self,
        thing: Uuid,
        positions: &mut BTreeMap<String, u64>,
        write_from: i64,
        output: &mut PipelineOutput,
        report: &mut QcRunReport,
    ) -> Result<()> {
        let written_at = now_ns();
        // Points before `write_from` served as context; on a truncated
        // window their results, including a partial first resample bin, are
        // not trustworthy.
        let keep = |t: i64| t >= write_from;
        let as_points = |pts: &[(i64, f64)]| -> Vec<NewPoint> {
            pts.iter()
                .map(|&(t, v)| NewPoint {
                    phenomenon_time: t,
                    result: v,
                    result_time: written_at,
                })
                .collect()
        };
        for (k, entry) in output.entries.iter().enumerate() {
            if let Some(d) = &entry.derived {
                let ds = match positions.get(&d.name) {
                    Some(&id) => id,
                    None => {
                        let source = *positions
                            .get(&d.source)
                            .ok_or_else(|| config_error(report.entries[k].line, "unknown source"))?;
                        let id = self.create_derived_datastream(thing, source, d)?;
                        positions.insert(d.name.clone(), id);
                        id
                    }
                };
                let points: Vec<(i64, f64)> = d.points.iter().copied().filter(|p| keep(p.0)).collect();
                if !points.is_empty() {
                    self.writer(ds)?.append_processed(&as_points(&points))?;
                }
            }
            let ds = positions.get(&entry.variable).copied();
            if !entry.value_updates.is_empty() {
                let ds = ds.ok_or_else(|| config_error(report.entries[k].line, "unknown variable"))?;
                let updates: Vec<(i64, f64)> =
                    entry.value_updates.iter().copied().filter(|p| keep(p.0)).collect();
                if !updates.is_empty() {
                    self.writer(ds)?.append_processed(&as_points(&updates))?;
                }
            }
            if let Some(column) = &entry.column {
                let ds = ds.ok_or_else(|| config_error(report.entries[k].line, "unknown variable"))?;
                let entries: Vec<(i64, f32)> =
                    column.entries.iter().copied().filter(|e| keep(e.0)).collect();
                let meta = FlagMeta {
                    function: column.meta.function.clone(),
                    params: column.meta.params.clone(),
                    config_hash: column.meta.config_hash.clone(),
                    engine_version: column.meta.engine_version.clone(),
                    run_at: column.meta.run_at.clone(),
                };
                let id = self.writer(ds)?.write_flag_column(meta, &entries)?;
                report.entries[k].column_id = Some(id);
            }
        }
        output.report = report.clone();
        Ok(())
    }

    fn create_derived_datastream(&self, thing: Uuid, source: u64, d: &fairstream_qc::DerivedSeries) -> Result<u64> {
        let src = self.datastream(source)?;
        let id = self.read_state(|s| s.next_datastream_id);
        self.add_store_datastream(id)?;
        self.mutate(|s| {
            if s.next_datastream_id != id {
                return Err(PlatformError::validation("datastreams", "concurrent provisioning, retry"));
            }
            s.next_datastream_id += 1;
            s.datastreams.insert(
                id,
                DatastreamDecl {
                    id,
                    thing_uuid: thing,
                    position: d.name.clone(),
                    name: d.name.clone(),
                    description: format!("{} of {}", d.function, src.name),
                    unit: src.unit.clone(),
                    device_id: src.device_id,
                    observed_property_id: src.observed_property_id,
                    derived_from: Some(DerivedFrom {
                        source,
                        function: d.function.clone(),
                        params: d.params.clone(),
                    }),
                },
            );
            Ok(())
        })?;
        info!(datastream = id, name = %d.name, "derived datastream created");
        Ok(id)
    }
}
