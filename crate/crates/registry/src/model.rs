use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::RegistryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactRole {
    Owner,
    Pi,
    Technician,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub given_name: String,
    pub family_name: String,
    pub email: String,
    #[serde(default)]
    pub organization: String,
    pub role: ContactRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredQuantity {
    pub name: String,
    /// UCUM-style unit code.
    pub unit: String,
    pub position_index: u16,
}

/// Device fields supplied at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDraft {
    pub short_name: String,
    pub manufacturer: String,
    pub model: String,
    pub serial_number: String,
    pub device_type: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub properties: Vec<MeasuredQuantity>,
    #[serde(default)]
    pub contacts: Vec<Contact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: u64,
    pub pid: String,
    pub short_name: String,
    pub manufacturer: String,
    pub model: String,
    pub serial_number: String,
    pub device_type: String,
    pub description: String,
    /// Sorted by `position_index`.
    pub properties: Vec<MeasuredQuantity>,
    pub contacts: Vec<Contact>,
    pub archived: bool,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Device {
    pub fn serial_triple(&self) -> (&str, &str, &str) {
        (&self.manufacturer, &self.model, &self.serial_number)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountDraft {
    pub configuration_label: String,
    pub begin: DateTime<Utc>,
    #[serde(default)]
    pub end: Option<DateTime<Utc>>,
    #[serde(default)]
    pub offset_x: f64,
    #[serde(default)]
    pub offset_y: f64,
    #[serde(default)]
    pub offset_z: f64,
    #[serde(default)]
    pub begin_description: String,
}

/// A deployment of a device over the half-open interval `[begin, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mount {
    pub id: u64,
    pub device_id: u64,
    pub configuration_label: String,
    pub begin: DateTime<Utc>,
    pub end: Option<DateTime<Utc>>,
    pub offset_x: f64,
    pub offset_y: f64,
    pub offset_z: f64,
    pub begin_description: String,
}

impl Mount {
    pub fn overlaps(&self, begin: DateTime<Utc>, end: Option<DateTime<Utc>>) -> bool {
        let starts_before_other_ends = end.is_none_or(|e| self.begin < e);
        let other_starts_before_end = self.end.is_none_or(|e| begin < e);
        starts_before_other_ends && other_starts_before_end
    }
}

fn invalid(field: impl Into<String>, reason: &str) -> RegistryError {
    RegistryError::Validation {
        field: field.into(),
        reason: reason.to_string(),
    }
}

fn require(field: &str, value: &str) -> Result<(), RegistryError> {
    if value.trim().is_empty() {
        Err(invalid(field, "must not be empty"))
    } else {
        Ok(())
    }
}

/// `local@domain.tld` with no whitespace and a single `@`.
pub fn is_valid_email(email: &str) -> bool {
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && !email.chars().any(char::is_whitespace)
        && domain.split('.').count() >= 2
        && domain.split('.').all(|label| !label.is_empty())
}

impl DeviceDraft {
    pub fn validate(&self) -> Result<(), RegistryError> {
        require("short_name", &self.short_name)?;
        require("manufacturer", &self.manufacturer)?;
        require("model", &self.model)?;
        require("serial_number", &self.serial_number)?;
        require("device_type", &self.device_type)?;
        for (i, q) in self.properties.iter().enumerate() {
            require(&format!("properties[{i}].name"), &q.name)?;
            require(&format!("properties[{i}].unit"), &q.unit)?;
            if self.properties[..i]
                .iter()
                .any(|p| p.position_index == q.position_index)
            {
                return Err(invalid(
                    format!("properties[{i}].position_index"),
                    "must be unique per device",
                ));
            }
        }
        if self.contacts.is_empty() {
            return Err(invalid("contacts", "at least one contact is required"));
        }
        for (i, c) in self.contacts.iter().enumerate() {
            require(&format!("contacts[{i}].given_name"), &c.given_name)?;
            require(&format!("contacts[{i}].family_name"), &c.family_name)?;
            if !is_valid_email(&c.email) {
                return Err(invalid(format!("contacts[{i}].email"), "not a valid address"));
            }
        }
        Ok(())
    }
}

impl MountDraft {
    pub fn validate(&self) -> Result<(), RegistryError> {
        require("configuration_label", &self.configuration_label)?;
        if self.end.is_some_and(|e| e <= self.begin) {
            return Err(invalid("end", "must be after begin"));
        }
        for (name, v) in [
            ("offset_x", self.offset_x),
            ("offset_y", self.offset_y),
            ("offset_z", self.offset_z),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        Ok(())
    }
}
