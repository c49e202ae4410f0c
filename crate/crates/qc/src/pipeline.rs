//! Ordered execution of a [`QcConfig`] over in-memory series.
//!
//! The pipeline is pure: it returns the flag columns, value updates and
//! derived series it produced, and the caller persists them.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{effective_kwargs, QcFunction};
use crate::config::QcConfig;
use crate::expr::TARGET;
use crate::flags::{BAD, DOUBTFUL, UNFLAGGED};
use crate::functions;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One variable: points in ascending time order plus their current flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub flags: Vec<f32>,
}

impl Series {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>) -> Self {
        let flags = vec![UNFLAGGED; timestamps.len()];
        Self::with_flags(timestamps, values, flags)
    }

    pub fn with_flags(timestamps: Vec<i64>, values: Vec<f64>, flags: Vec<f32>) -> Self {
        assert_eq!(timestamps.len(), values.len());
        assert_eq!(timestamps.len(), flags.len());
        debug_assert!(timestamps.windows(2).all(|w| w[0] < w[1]));
        Self {
            timestamps,
            values,
            flags,
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn value_at(&self, t: i64) -> Option<f64> {
        self.timestamps
            .binary_search(&t)
            .ok()
            .map(|i| self.values[i])
            .filter(|v| !v.is_nan())
    }

    /// Indices of points a call with this `dfilter` evaluates.
    fn unmasked(&self, dfilter: f32, keep_nan: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.flags[i] < dfilter && (keep_nan || !self.values[i].is_nan()))
            .collect()
    }
}

pub type Workspace = BTreeMap<String, Series>;

#[derive(Debug, Clone)]
pub struct RunContext {
    pub engine_version: String,
    /// RFC3339 timestamp recorded in every column of the run.
    pub run_at: String,
}

impl RunContext {
    pub fn new(run_at: impl Into<String>) -> Self {
        Self {
            engine_version: ENGINE_VERSION.to_string(),
            run_at: run_at.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub function: String,
    pub params: String,
    pub config_hash: String,
    pub engine_version: String,
    pub run_at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnOutput {
    pub meta: ColumnMeta,
    /// Ascending by timestamp.
    pub entries: Vec<(i64, f32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedSeries {
    pub name: String,
    pub source: String,
    pub function: String,
    pub params: String,
    pub points: Vec<(i64, f64)>,
}

/// Everything one entry produced, in pipeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryOutput {
    pub variable: String,
    pub column: Option<ColumnOutput>,
    pub value_updates: Vec<(i64, f64)>,
    pub derived: Option<DerivedSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub line: usize,
    pub variable: String,
    pub function: String,
    pub evaluated: u64,
    pub flagged: u64,
    /// Filled in once the column is persisted.
    pub column_id: Option<u64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcRunReport {
    pub config_hash: String,
    pub engine_version: String,
    pub run_at: String,
    /// Inclusive time window of the data processed, if any.
    pub window: Option<(i64, i64)>,
    pub entries: Vec<EntryReport>,
}

impl QcRunReport {
    pub fn evaluated(&self) -> u64 {
        self.entries.iter().map(|e| e.evaluated).sum()
    }

    pub fn flagged(&self) -> u64 {
        self.entries.iter().map(|e| e.flagged).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: QcRunReport,
    pub entries: Vec<EntryOutput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("line {line}: unknown variable {name:?}")]
    UnknownVariable { line: usize, name: String },
}

/// Runs every entry in source order. Flags, values and derived series
/// produced by an entry are visible to the entries after it.
pub fn run_pipeline(
    config: &QcConfig,
    workspace: &mut Workspace,
    ctx: &RunContext,
) -> Result<PipelineOutput, PipelineError> {
    config
        .validate_variables(&workspace.keys().collect::<Vec<_>>())
        .map_err(|e| PipelineError::UnknownVariable {
            line: e.line(),
            name: match e {
                crate::ConfigError::UnknownVariable { name, .. } => name,
                other => other.to_string(),
            },
        })?;

    let window = workspace
        .values()
        .filter(|s| !s.is_empty())
        .map(|s| (s.timestamps[0], s.timestamps[s.len() - 1]))
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)));

    let mut report = QcRunReport {
        config_hash: config.config_hash.clone(),
        engine_version: ctx.engine_version.clone(),
        run_at: ctx.run_at.clone(),
        window,
        entries: Vec::with_capacity(config.entries.len()),
    };
    let mut outputs = Vec::with_capacity(config.entries.len());

    for entry in &config.entries {
        let started = Instant::now();
        let params = effective_kwargs(&entry.call.name, &entry.call.kwargs, entry.call.dfilter);
        let meta = ColumnMeta {
            function: entry.call.name.clone(),
            params: params.clone(),
            config_hash: config.config_hash.clone(),
            engine_version: ctx.engine_version.clone(),
            run_at: ctx.run_at.clone(),
        };
        let unknown = || PipelineError::UnknownVariable {
            line: entry.line,
            name: entry.variable.clone(),
        };
        let target = workspace.get(&entry.variable).ok_or_else(unknown)?;
        let dfilter = entry.call.dfilter;

        let mut out = EntryOutput {
            variable: entry.variable.clone(),
            column: None,
            value_updates: Vec::new(),
            derived: None,
        };
        let evaluated;
        let flagged;

        match &entry.function {
            QcFunction::Resample {
                freq, aggregation, ..
            } => {
                let idx = target.unmasked(dfilter, false);
                let ts: Vec<i64> = idx.iter().map(|&i| target.timestamps[i]).collect();
                let vs: Vec<f64> = idx.iter().map(|&i| target.values[i]).collect();
                let points = functions::resample(&ts, &vs, *freq, *aggregation);
                let name = entry.function.derived_name(&entry.variable);
                evaluated = idx.len() as u64;
                flagged = 0;
                let (t, v): (Vec<i64>, Vec<f64>) = points.iter().copied().unzip();
                workspace.insert(name.clone(), Series::new(t, v));
                out.derived = Some(DerivedSeries {
                    name,
                    source: entry.variable.clone(),
                    function: entry.call.name.clone(),
                    params,
                    points,
                });
            }
            QcFunction::Interpolate { maxgap } => {
                let idx = target.unmasked(dfilter, true);
                let ts: Vec<i64> = idx.iter().map(|&i| target.timestamps[i]).collect();
                let vs: Vec<f64> = idx.iter().map(|&i| target.values[i]).collect();
                let filled = functions::interpolate(&ts, &vs, *maxgap);
                evaluated = idx.len() as u64;
                flagged = filled.len() as u64;
                let series = workspace.get_mut(&entry.variable).expect("checked above");
                let mut entries = Vec::with_capacity(filled.len());
                for (k, v) in filled {
                    let i = idx[k];
                    series.values[i] = v;
                    series.flags[i] = DOUBTFUL;
                    out.value_updates.push((series.timestamps[i], v));
                    entries.push((series.timestamps[i], DOUBTFUL));
                }
                out.column = Some(ColumnOutput { meta, entries });
            }
            flagging => {
                let idx = target.unmasked(dfilter, false);
                let vs: Vec<f64> = idx.iter().map(|&i| target.values[i]).collect();
                let hits = match flagging {
                    QcFunction::FlagRange { min, max } => functions::flag_range(&vs, *min, *max),
                    QcFunction::FlagSpikeMad { window, z } => {
                        functions::flag_spike_mad(&vs, *window, *z)
                    }
                    QcFunction::FlagConstants { window, tolerance } => {
                        functions::flag_constants(&vs, *window, *tolerance)
                    }
                    QcFunction::FlagGeneric { expr } => {
                        let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
                        for name in expr.variables() {
                            let col = if name == TARGET {
                                vs.iter().map(|v| Some(*v)).collect()
                            } else {
                                let other = workspace.get(name).ok_or_else(|| {
                                    PipelineError::UnknownVariable {
                                        line: entry.line,
                                        name: name.clone(),
                                    }
                                })?;
                                idx.iter()
                                    .map(|&i| other.value_at(target.timestamps[i]))
                                    .collect()
                            };
                            columns.push(col);
                        }
                        functions::flag_generic(expr, vs.len(), |slot, i| columns[slot][i])
                    }
                    QcFunction::Resample { .. } | QcFunction::Interpolate { .. } => unreachable!(),
                };
                evaluated = idx.len() as u64;
                flagged = hits.len() as u64;
                let series = workspace.get_mut(&entry.variable).expect("checked above");
                let entries = hits
                    .into_iter()
                    .map(|k| {
                        let i = idx[k];
                        series.flags[i] = BAD;
                        (series.timestamps[i], BAD)
                    })
                    .collect();
                out.column = Some(ColumnOutput { meta, entries });
            }
        }

        report.entries.push(EntryReport {
            line: entry.line,
            variable: entry.variable.clone(),
            function: entry.call.name.clone(),
            evaluated,
            flagged,
            column_id: None,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        outputs.push(out);
    }

    Ok(PipelineOutput {
        report,
        entries: outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> RunContext {
        RunContext::new("2024-05-01T00:00:00Z")
    }

    fn ws(vars: &[(&str, &[f64])]) -> Workspace {
        vars.iter()
            .map(|(n, v)| {
                let ts = (0..v.len() as i64).map(|i| i * 60_000_000_000).collect();
                (n.to_string(), Series::new(ts, v.to_vec()))
            })
            .collect()
    }

    #[test]
    fn empty_config() {
        let c = QcConfig::parse("# nothing").unwrap();
        let out = run_pipeline(&c, &mut ws(&[("t", &[1.0])]), &ctx()).unwrap();
        assert!(out.entries.is_empty());
        assert!(out.report.entries.is_empty());
    }

    #[test]
    fn two_flagging_entries_two_columns() {
        let c = QcConfig::parse(
            "t ; flagRange(min=0, max=10)\nt ; flagConstants(window=3, tolerance=0)",
        )
        .unwrap();
        let mut w = ws(&[("t", &[1.0, 50.0, 3.0, 3.0, 3.0, 4.0])]);
        let out = run_pipeline(&c, &mut w, &ctx()).unwrap();
        assert_eq!(out.entries.len(), 2);
        let cols: Vec<_> = out
            .entries
            .iter()
            .map(|e| e.column.as_ref().unwrap())
            .collect();
        assert_eq!(cols[0].entries, vec![(60_000_000_000, BAD)]);
        assert_eq!(cols[0].meta.params, "dfilter=255, max=10, min=0");
        assert_eq!(cols[1].entries.len(), 3);
        assert_eq!(out.report.entries[0].evaluated, 6);
        assert_eq!(out.report.entries[1].evaluated, 5);
        assert_eq!(out.report.flagged(), 4);
    }

    #[test]
    fn masked_point_excluded_from_spike_windows() {
        // The 1000 is range-flagged first; without masking it would inflate
        // the MAD window around the 50.
        let c = QcConfig::parse(
            "t ; flagRange(min=-500, max=500)\nt ; flagSpikeMAD(window=3, z=3.5)",
        )
        .unwrap();
        let mut w = ws(&[("t", &[1.0, 1.0, 1000.0, 1.0, 1.0])]);
        let out = run_pipeline(&c, &mut w, &ctx()).unwrap();
        assert_eq!(
            out.entries[1].column.as_ref().unwrap().entries,
            Vec::<(i64, f32)>::new()
        );
        assert_eq!(out.report.entries[1].evaluated, 4);
    }

    #[test]
    fn generic_aligns_by_timestamp() {
        let c = QcConfig::parse("x1 ; flagGeneric(expr='x > p / 100')").unwrap();
        let mut w = Workspace::new();
        w.insert("x1".into(), Series::new(vec![0, 10, 20], vec![11.0, 11.0, 11.0]));
        w.insert("p".into(), Series::new(vec![0, 20], vec![1000.0, 2000.0]));
        let out = run_pipeline(&c, &mut w, &ctx()).unwrap();
        assert_eq!(out.entries[0].column.as_ref().unwrap().entries, vec![(0, BAD)]);
    }

    #[test]
    fn resample_then_flag_derived() {
        let c = QcConfig::parse(
            "t ; resample(freq=120, aggregation='max')\nt_max ; flagRange(min=0, max=5)",
        )
        .unwrap();
        let mut w = ws(&[("t", &[1.0, 9.0, 2.0, 3.0])]);
        let out = run_pipeline(&c, &mut w, &ctx()).unwrap();
        let d = out.entries[0].derived.as_ref().unwrap();
        assert_eq!(d.points, vec![(0, 9.0), (120_000_000_000, 3.0)]);
        assert!(out.entries[0].column.is_none());
        assert_eq!(out.entries[1].column.as_ref().unwrap().entries, vec![(0, BAD)]);
    }

    #[test]
    fn interpolate_flags_doubtful() {
        let c = QcConfig::parse("t ; interpolate(maxgap='3min')").unwrap();
        let mut w = ws(&[("t", &[0.0, f64::NAN, 10.0])]);
        let out = run_pipeline(&c, &mut w, &ctx()).unwrap();
        assert_eq!(out.entries[0].value_updates, vec![(60_000_000_000, 5.0)]);
        assert_eq!(
            out.entries[0].column.as_ref().unwrap().entries,
            vec![(60_000_000_000, DOUBTFUL)]
        );
        assert_eq!(w["t"].values[1], 5.0);
    }

    #[test]
    fn unknown_variable() {
        let c = QcConfig::parse("t ; flagRange(min=0, max=1)").unwrap();
        assert_eq!(
            run_pipeline(&c, &mut Workspace::new(), &ctx()).unwrap_err(),
            PipelineError::UnknownVariable {
                line: 1,
                name: "t".into()
            }
        );
    }
}
