//! The fixed function catalog and kwarg validation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::config::{ConfigError, Literal, DEFAULT_DFILTER};
use crate::expr::{Expr, TARGET};
use crate::flags::{BAD, DOUBTFUL, GOOD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Min,
    Max,
    Count,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Count => "count",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            "count" => Ok(Aggregation::Count),
            _ => Err(()),
        }
    }
}

/// A validated catalog call. Durations are nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum QcFunction {
    FlagRange { min: f64, max: f64 },
    FlagSpikeMad { window: usize, z: f64 },
    FlagConstants { window: usize, tolerance: f64 },
    FlagGeneric { expr: Expr },
    Resample {
        freq: i64,
        aggregation: Aggregation,
        target: Option<String>,
    },
    Interpolate { maxgap: i64 },
}

impl QcFunction {
    pub fn name(&self) -> &'static str {
        match self {
            QcFunction::FlagRange { .. } => "flagRange",
            QcFunction::FlagSpikeMad { .. } => "flagSpikeMAD",
            QcFunction::FlagConstants { .. } => "flagConstants",
            QcFunction::FlagGeneric { .. } => "flagGeneric",
            QcFunction::Resample { .. } => "resample",
            QcFunction::Interpolate { .. } => "interpolate",
        }
    }

    /// Whether the entry writes a flag column.
    pub fn writes_flags(&self) -> bool {
        !matches!(self, QcFunction::Resample { .. })
    }

    /// Variables the entry reads besides its target.
    pub fn referenced_variables(&self) -> Vec<&str> {
        match self {
            QcFunction::FlagGeneric { expr } => expr
                .variables()
                .iter()
                .map(String::as_str)
                .filter(|v| *v != TARGET)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Name of the series a `resample` entry produces.
    pub fn derived_name(&self, variable: &str) -> String {
        match self {
            QcFunction::Resample {
                aggregation,
                target,
                ..
            } => target
                .clone()
                .unwrap_or_else(|| format!("{variable}_{aggregation}")),
            _ => variable.to_string(),
        }
    }

    /// Time span of context the function looks at around a point, given the
    /// typical sampling period for count-based windows.
    pub fn context_span(&self, sampling_period: i64) -> i64 {
        match self {
            QcFunction::FlagSpikeMad { window, .. } | QcFunction::FlagConstants { window, .. } => {
                (*window as i64).saturating_mul(sampling_period)
            }
            QcFunction::Resample { freq, .. } => *freq,
            QcFunction::Interpolate { maxgap } => *maxgap,
            QcFunction::FlagRange { .. } | QcFunction::FlagGeneric { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Number,
    /// Non-negative integer.
    Count,
    /// Humantime string ("90s", "2min") or number of seconds.
    Duration,
    Text,
}

struct Param {
    name: &'static str,
    kind: Kind,
    default: Option<Fallback>,
}

#[derive(Clone, Copy)]
enum Fallback {
    Number(f64),
    Text(&'static str),
    /// Optional without a default value.
    Absent,
}

const fn req(name: &'static str, kind: Kind) -> Param {
    Param {
        name,
        kind,
        default: None,
    }
}

const fn opt(name: &'static str, kind: Kind, default: Fallback) -> Param {
    Param {
        name,
        kind,
        default: Some(default),
    }
}

struct Signature {
    name: &'static str,
    params: &'static [Param],
}

const CATALOG: &[Signature] = &[
    Signature {
        name: "flagRange",
        params: &[req("min", Kind::Number), req("max", Kind::Number)],
    },
    Signature {
        name: "flagSpikeMAD",
        params: &[
            req("window", Kind::Count),
            opt("z", Kind::Number, Fallback::Number(3.5)),
        ],
    },
    Signature {
        name: "flagConstants",
        params: &[req("window", Kind::Count), req("tolerance", Kind::Number)],
    },
    Signature {
        name: "flagGeneric",
        params: &[req("expr", Kind::Text)],
    },
    Signature {
        name: "resample",
        params: &[
            req("freq", Kind::Duration),
            opt("aggregation", Kind::Text, Fallback::Text("mean")),
            opt("target", Kind::Text, Fallback::Absent),
        ],
    },
    Signature {
        name: "interpolate",
        params: &[req("maxgap", Kind::Duration)],
    },
];

pub fn function_names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|s| s.name)
}

/// Kwargs with defaults filled in, in canonical order. Used as the
/// provenance parameter string.
pub fn effective_kwargs(name: &str, kwargs: &BTreeMap<String, Literal>, dfilter: f32) -> String {
    let mut all = kwargs.clone();
    if let Some(sig) = CATALOG.iter().find(|s| s.name == name) {
        for p in sig.params {
            if all.contains_key(p.name) {
                continue;
            }
            match p.default {
                Some(Fallback::Number(v)) => {
                    all.insert(p.name.into(), Literal::Number(v));
                }
                Some(Fallback::Text(t)) => {
                    all.insert(p.name.into(), Literal::Str(t.into()));
                }
                _ => {}
            }
        }
    }
    all.insert("dfilter".into(), Literal::Number(f64::from(dfilter)));
    all.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

struct Args<'a> {
    line: usize,
    function: &'a str,
    kwargs: &'a BTreeMap<String, Literal>,
}

impl Args<'_> {
    fn bad(&self, kwarg: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::BadArgument {
            line: self.line,
            function: self.function.to_string(),
            kwarg: kwarg.to_string(),
            reason: reason.into(),
        }
    }

    fn get(&self, p: &Param) -> Result<Option<&Literal>, ConfigError> {
        match (self.kwargs.get(p.name), p.default) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(_)) => Ok(None),
            (None, None) => Err(self.bad(p.name, "required argument missing")),
        }
    }

    fn number(&self, p: &Param) -> Result<f64, ConfigError> {
        match self.get(p)? {
            Some(Literal::Number(v)) if v.is_finite() => Ok(*v),
            Some(Literal::Number(_)) => Err(self.bad(p.name, "must be finite")),
            Some(other) => Err(self.bad(p.name, format!("expected number, got {}", other.type_name()))),
            None => match p.default {
                Some(Fallback::Number(v)) => Ok(v),
                _ => unreachable!("numeric parameter with non-numeric default"),
            },
        }
    }

    fn count(&self, p: &Param) -> Result<usize, ConfigError> {
        let v = self.number(p)?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e9 {
            return Err(self.bad(p.name, "expected a non-negative integer"));
        }
        Ok(v as usize)
    }

    fn text(&self, p: &Param) -> Result<Option<String>, ConfigError> {
        match self.get(p)? {
            Some(Literal::Str(s)) => Ok(Some(s.clone())),
            Some(other) => Err(self.bad(p.name, format!("expected string, got {}", other.type_name()))),
            None => Ok(match p.default {
                Some(Fallback::Text(t)) => Some(t.to_string()),
                _ => None,
            }),
        }
    }

    fn duration(&self, p: &Param) -> Result<i64, ConfigError> {
        let nanos = match self.get(p)? {
            Some(Literal::Number(secs)) if secs.is_finite() => secs * 1e9,
            Some(Literal::Str(s)) => humantime::parse_duration(s.trim())
                .map_err(|e| self.bad(p.name, format!("invalid duration: {e}")))?
                .as_nanos() as f64,
            Some(other) => {
                return Err(self.bad(p.name, format!("expected duration, got {}", other.type_name())))
            }
            None => unreachable!("durations are required"),
        };
        if !(nanos >= 1.0 && nanos < i64::MAX as f64) {
            return Err(self.bad(p.name, "duration must be positive"));
        }
        Ok(nanos.round() as i64)
    }

    fn dfilter(&self) -> Result<f32, ConfigError> {
        match self.kwargs.get("dfilter") {
            None => Ok(DEFAULT_DFILTER),
            Some(Literal::Number(v)) if (0.0..=255.0).contains(v) => Ok(*v as f32),
            Some(Literal::Str(s)) => match s.as_str() {
                "GOOD" | "OK" => Ok(GOOD),
                "DOUBTFUL" => Ok(DOUBTFUL),
                "BAD" => Ok(BAD),
                _ => Err(self.bad("dfilter", "expected a flag level name or number in [0, 255]")),
            },
            Some(_) => Err(self.bad("dfilter", "expected a flag level name or number in [0, 255]")),
        }
    }
}

/// Validates `kwargs` against the catalog and returns the typed function
/// together with the call's dfilter.
pub fn build(
    line: usize,
    name: &str,
    kwargs: &BTreeMap<String, Literal>,
) -> Result<(QcFunction, f32), ConfigError> {
    let sig = CATALOG
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ConfigError::UnknownFunction {
            line,
            name: name.to_string(),
        })?;
    let args = Args {
        line,
        function: sig.name,
        kwargs,
    };
    if let Some(unknown) = kwargs
        .keys()
        .find(|k| *k != "dfilter" && !sig.params.iter().any(|p| p.name == k.as_str()))
    {
        return Err(args.bad(unknown, "unknown argument"));
    }
    let p = |n: &str| sig.params.iter().find(|p| p.name == n).expect("declared");
    debug_assert!(sig.params.iter().all(|p| match p.kind {
        Kind::Number | Kind::Count => matches!(p.default, None | Some(Fallback::Number(_))),
        Kind::Text => !matches!(p.default, Some(Fallback::Number(_))),
        Kind::Duration => p.default.is_none(),
    }));

    let function = match sig.name {
        "flagRange" => {
            let min = args.number(p("min"))?;
            let max = args.number(p("max"))?;
            if min > max {
                return Err(args.bad("min", "min must not exceed max"));
            }
            QcFunction::FlagRange { min, max }
        }
        "flagSpikeMAD" => {
            let window = args.count(p("window"))?;
            if window < 3 || window % 2 == 0 {
                return Err(args.bad("window", "window must be odd and at least 3"));
            }
            let z = args.number(p("z"))?;
            if z <= 0.0 {
                return Err(args.bad("z", "z must be positive"));
            }
            QcFunction::FlagSpikeMad { window, z }
        }
        "flagConstants" => {
            let window = args.count(p("window"))?;
            if window < 2 {
                return Err(args.bad("window", "window must be at least 2"));
            }
            let tolerance = args.number(p("tolerance"))?;
            if tolerance < 0.0 {
                return Err(args.bad("tolerance", "tolerance must not be negative"));
            }
            QcFunction::FlagConstants { window, tolerance }
        }
        "flagGeneric" => {
            let text = args.text(p("expr"))?.expect("required");
            let expr = Expr::parse(&text).map_err(|e| ConfigError::ExprSyntax {
                line,
                position: e.position,
                message: e.message,
            })?;
            QcFunction::FlagGeneric { expr }
        }
        "resample" => {
            let freq = args.duration(p("freq"))?;
            let agg_text = args.text(p("aggregation"))?.expect("defaulted");
            let aggregation = agg_text
                .parse()
                .map_err(|()| args.bad("aggregation", "expected mean, min, max or count"))?;
            let target = args.text(p("target"))?;
            if let Some(t) = &target {
                let valid = t.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                    && t.chars().all(|c| c.is_alphanumeric() || c == '_');
                if !valid {
                    return Err(args.bad("target", "target must be a variable name"));
                }
            }
            QcFunction::Resample {
                freq,
                aggregation,
                target,
            }
        }
        "interpolate" => QcFunction::Interpolate {
            maxgap: args.duration(p("maxgap"))?,
        },
        other => unreachable!("catalog entry {other} without builder"),
    };
    Ok((function, args.dfilter()?))
}
