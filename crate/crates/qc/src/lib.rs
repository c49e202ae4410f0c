//! Quality control: a small configuration language, a fixed catalog of
//! flagging and processing functions, and flag schemes.

pub mod catalog;
pub mod config;
pub mod expr;
pub mod flags;
pub mod functions;
pub mod pipeline;

pub use catalog::{Aggregation, QcFunction};
pub use config::{config_hash, ConfigError, Literal, QcCall, QcConfig, QcEntry};
pub use expr::{Expr, ExprError};
pub use flags::{level, FlagScheme, SchemeError, BAD, DOUBTFUL, GOOD, UNFLAGGED, UNTOUCHED};
pub use pipeline::{
    run_pipeline, ColumnMeta, ColumnOutput, DerivedSeries, EntryOutput, EntryReport,
    PipelineError, PipelineOutput, QcRunReport, RunContext, Series, Workspace, ENGINE_VERSION,
};
