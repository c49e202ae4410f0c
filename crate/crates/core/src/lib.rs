//! The platform service: device registry, Things with their ingest
//! credentials and dashboards, QC attachments, and the HTTP surface over
//! all of it.

pub mod auth;
pub mod config;
pub mod error;
pub mod http;
pub mod platform;
pub mod qc;
pub mod server;
pub mod source;
pub mod state;

pub use auth::{Authenticator, Principal, Role};
pub use config::Config;
pub use error::{PlatformError, Result};
pub use platform::{CreatedThing, DatastreamSpec, ObservedPropertySpec, Platform, ThingSpec};
pub use qc::AttachSpec;
pub use source::PlatformSource;
pub use state::{QcScope, Schedule};
