use serde_json::{json, Value};
use thiserror::Error;

use crate::model::EntityKind;

/// Rejections of a query string. Positions are 0-based character offsets
/// within the option's decoded value.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("{option}: parse error at position {position}, expected {}", expected.join(" or "))]
    Parse {
        option: String,
        position: usize,
        expected: Vec<String>,
    },
    #[error("{option}: unknown property {name:?} at position {position}")]
    UnknownProperty {
        option: String,
        name: String,
        position: usize,
    },
    #[error("unknown navigation property {0:?}")]
    UnknownNavigation(String),
    #[error("{option}: {message}")]
    InvalidValue { option: String, message: String },
    #[error("unsupported query option {0}")]
    UnsupportedOption(String),
}

impl QueryError {
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Parse { position, .. } | QueryError::UnknownProperty { position, .. } => {
                Some(*position)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StaError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{kind}({id}) not found")]
    NotFound { kind: EntityKind, id: u64 },
    #[error("no such resource: {0}")]
    UnknownPath(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

impl StaError {
    pub fn status(&self) -> u16 {
        match self {
            StaError::Query(QueryError::UnsupportedOption(_)) => 501,
            StaError::Query(_) => 400,
            StaError::NotFound { .. } | StaError::UnknownPath(_) => 404,
            StaError::Backend(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            StaError::Query(QueryError::Parse { .. }) => "QueryParseError",
            StaError::Query(QueryError::UnknownProperty { .. }) => "UnknownProperty",
            StaError::Query(QueryError::UnknownNavigation(_)) => "UnknownNavigation",
            StaError::Query(QueryError::InvalidValue { .. }) => "InvalidValue",
            StaError::Query(QueryError::UnsupportedOption(_)) => "UnsupportedOption",
            StaError::NotFound { .. } | StaError::UnknownPath(_) => "NotFound",
            StaError::Backend(_) => "InternalError",
        }
    }

    /// `{"error": {"code", "message", "position"?}}`
    pub fn body(&self) -> Value {
        let mut err = json!({ "code": self.code(), "message": self.to_string() });
        if let StaError::Query(q) = self {
            if let Some(p) = q.position() {
                err["position"] = json!(p);
            }
        }
        json!({ "error": err })
    }
}
