//! Device metadata registry: registration, deployment history, persistent
//! identifiers and standards-shaped exports.

mod error;
pub mod export;
pub mod model;
mod registry;
pub mod xsd;

pub use error::{RegistryError, Result};
pub use export::{extract_sensorml, SensorMlSummary};
pub use model::{Contact, ContactRole, Device, DeviceDraft, MeasuredQuantity, Mount, MountDraft};
pub use registry::{Registry, SearchPage, SearchQuery, DEFAULT_PID_PREFIX};
pub use xsd::{Schema, SchemaError};

impl Registry {
    pub fn export_jsonapi(&self, device_id: u64) -> Result<String> {
        let device = self.device(device_id)?;
        let mounts = self.mounts(device_id)?;
        Ok(export::jsonapi_document(&device, &mounts))
    }

    pub fn export_sensorml(&self, device_id: u64) -> Result<String> {
        Ok(export::sensorml_document(&self.device(device_id)?))
    }
}
