//! Read-only SensorThings-style API: entity documents, an OData query
//! subset and collection paging over a pluggable data source.

mod error;
pub mod model;
pub mod query;
pub mod serialize;
pub mod service;

pub use error::{QueryError, StaError};
pub use model::{
    format_time, DatastreamRecord, Entity, EntityKind, ObservationRecord, ObservedPropertyRecord,
    PropValue, Record, SensorRecord, ThingRecord, UnitOfMeasurement,
};
pub use query::{parse_filter, parse_query, Filter, StaQuery};
pub use service::{parse_path, root_document, Resource, Scope, StaService, StaSource, TimeRange};
