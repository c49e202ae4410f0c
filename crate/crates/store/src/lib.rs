//! Embedded time-series storage.
//!
//! Each datastream lives in its own directory under `<data>/ds/<id>/`:
//! a write-ahead log (`wal.log`), sorted columnar segments (`seg/*.fsg`) and
//! an append-only stack of flag columns (`flags/*.ffc`). Appends are durable
//! once they return; a background compactor folds the log into segments.

mod error;
pub mod flags;
pub mod segment;
mod store;
pub mod verify;
pub mod wal;

pub use error::{Result, StoreError};
pub use flags::{FlagColumn, FlagMeta, UNFLAGGED};
pub use store::{
    AppendOutcome, DatastreamWriter, NewPoint, Order, RangeQuery, Store, StoreConfig,
    StoredObservation,
};
pub use verify::{verify_data_dir, Problem, VerifyReport};
