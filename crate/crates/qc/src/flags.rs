//! Internal flag vocabulary and translation to external schemes.
//!
//! Flags are `f32`. The named levels are ordered
//! `UNFLAGGED < GOOD < DOUBTFUL < BAD`; any value in `[0, 255]` may be
//! persisted. `UNTOUCHED` marks "no assignment" inside a run and is never
//! written out.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const UNTOUCHED: f32 = f32::NAN;
pub const UNFLAGGED: f32 = f32::NEG_INFINITY;
pub const GOOD: f32 = 0.0;
pub const DOUBTFUL: f32 = 25.0;
pub const BAD: f32 = 255.0;

pub fn is_persistable(flag: f32) -> bool {
    flag == UNFLAGGED || (0.0..=255.0).contains(&flag)
}

/// Named level a persisted flag belongs to: exact levels map to themselves,
/// intermediate values round up to the next named level.
pub fn level(flag: f32) -> f32 {
    if flag == UNFLAGGED {
        UNFLAGGED
    } else if flag <= GOOD {
        GOOD
    } else if flag <= DOUBTFUL {
        DOUBTFUL
    } else {
        BAD
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("unknown flag scheme {0:?}")]
    UnknownScheme(String),
    #[error("label {label:?} is not part of the {scheme} scheme")]
    UndecodableLabel { scheme: FlagScheme, label: String },
    #[error("flag {0} is not a persistable value")]
    NotPersistable(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum FlagScheme {
    /// The internal float values themselves.
    Float,
    /// `""`, `"OK"`, `"DOUBTFUL"`, `"BAD"`.
    #[default]
    Simple,
}

impl FlagScheme {
    pub fn encode(self, flag: f32) -> Result<String, SchemeError> {
        if !is_persistable(flag) {
            return Err(SchemeError::NotPersistable(flag));
        }
        Ok(match self {
            FlagScheme::Float if flag == UNFLAGGED => "-inf".to_string(),
            FlagScheme::Float => format_float(flag),
            FlagScheme::Simple => match level(flag) {
                l if l == UNFLAGGED => String::new(),
                l if l == GOOD => "OK".to_string(),
                l if l == DOUBTFUL => "DOUBTFUL".to_string(),
                _ => "BAD".to_string(),
            },
        })
    }

    pub fn decode(self, label: &str) -> Result<f32, SchemeError> {
        let undecodable = || SchemeError::UndecodableLabel {
            scheme: self,
            label: label.to_string(),
        };
        match self {
            FlagScheme::Simple => match label {
                "" => Ok(UNFLAGGED),
                "OK" => Ok(GOOD),
                "DOUBTFUL" => Ok(DOUBTFUL),
                "BAD" => Ok(BAD),
                _ => Err(undecodable()),
            },
            FlagScheme::Float => {
                let v = if label == "-inf" {
                    UNFLAGGED
                } else {
                    label.parse::<f32>().map_err(|_| undecodable())?
                };
                if is_persistable(v) {
                    Ok(v)
                } else {
                    Err(undecodable())
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlagScheme::Float => "float",
            FlagScheme::Simple => "simple",
        }
    }
}

impl fmt::Display for FlagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlagScheme {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(FlagScheme::Float),
            "simple" => Ok(FlagScheme::Simple),
            other => Err(SchemeError::UnknownScheme(other.to_string())),
        }
    }
}

fn format_float(v: f32) -> String {
    if v.fract() == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}
