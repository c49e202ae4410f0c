//! Per-Thing description of how a logger payload maps onto datastreams.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimestampFormat {
    Rfc3339,
    EpochSeconds,
    EpochMillis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecimalSeparator {
    #[default]
    Dot,
}

/// A column addressed by header name (CSV) / key (JSON lines) or by 0-based
/// index (CSV only).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

/// Maps one payload column onto a datastream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueColumn {
    pub column: ColumnRef,
    pub position: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserProfile {
    pub kind: PayloadKind,
    pub timestamp_column: ColumnRef,
    pub timestamp_format: TimestampFormat,
    pub value_columns: Vec<ValueColumn>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub skip_header_lines: u32,
    #[serde(default)]
    pub decimal_separator: DecimalSeparator,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("value_columns must not be empty")]
    NoValueColumns,
    #[error("timestamp column {0} is also a value column")]
    TimestampIsValue(ColumnRef),
    #[error("column {0} is mapped twice")]
    DuplicateColumn(ColumnRef),
    #[error("position {0:?} is mapped twice")]
    DuplicatePosition(String),
    #[error("position must not be empty")]
    EmptyPosition,
    #[error("delimiter {0:?} is not a single printable ASCII character other than a quote")]
    BadDelimiter(char),
    #[error("json-lines profiles address columns by key, not index")]
    IndexInJsonLines,
    #[error("csv columns addressed by name need a header line (skip_header_lines >= 1)")]
    NamesWithoutHeader,
}

impl ParserProfile {
    /// CSV with a single header line, RFC3339 timestamps in `timestamp`, and
    /// each `(column, position)` pair mapped by header name.
    pub fn csv_by_name<'a>(
        timestamp: &str,
        values: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        ParserProfile {
            kind: PayloadKind::Csv,
            timestamp_column: ColumnRef::Name(timestamp.into()),
            timestamp_format: TimestampFormat::Rfc3339,
            value_columns: values
                .into_iter()
                .map(|(c, p)| ValueColumn {
                    column: ColumnRef::Name(c.into()),
                    position: p.into(),
                })
                .collect(),
            delimiter: ',',
            skip_header_lines: 1,
            decimal_separator: DecimalSeparator::Dot,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.value_columns.is_empty() {
            return Err(ProfileError::NoValueColumns);
        }
        for (i, vc) in self.value_columns.iter().enumerate() {
            if vc.position.trim().is_empty() {
                return Err(ProfileError::EmptyPosition);
            }
            if vc.column == self.timestamp_column {
                return Err(ProfileError::TimestampIsValue(vc.column.clone()));
            }
            let earlier = &self.value_columns[..i];
            if earlier.iter().any(|e| e.column == vc.column) {
                return Err(ProfileError::DuplicateColumn(vc.column.clone()));
            }
            if earlier.iter().any(|e| e.position == vc.position) {
                return Err(ProfileError::DuplicatePosition(vc.position.clone()));
            }
        }
        let columns = || {
            std::iter::once(&self.timestamp_column).chain(self.value_columns.iter().map(|v| &v.column))
        };
        match self.kind {
            PayloadKind::JsonLines => {
                if columns().any(|c| matches!(c, ColumnRef::Index(_))) {
                    return Err(ProfileError::IndexInJsonLines);
                }
            }
            PayloadKind::Csv => {
                let d = self.delimiter;
                if !d.is_ascii() || d.is_ascii_control() && d != '\t' || d == '"' || d == '\n' {
                    return Err(ProfileError::BadDelimiter(d));
                }
                if self.skip_header_lines == 0 && columns().any(|c| matches!(c, ColumnRef::Name(_))) {
                    return Err(ProfileError::NamesWithoutHeader);
                }
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> impl Iterator<Item = &str> {
        self.value_columns.iter().map(|v| v.position.as_str())
    }
}
