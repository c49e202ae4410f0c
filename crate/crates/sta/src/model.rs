//! Entity kinds, their records and the property table used by the query
//! layer.

use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Thing,
    Datastream,
    Observation,
    Sensor,
    ObservedProperty,
}

/// Type of a filterable/orderable property.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropType {
    Number,
    Time,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cardinality {
    One,
    Many,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Thing,
        EntityKind::Datastream,
        EntityKind::Observation,
        EntityKind::Sensor,
        EntityKind::ObservedProperty,
    ];

    /// Collection name, which is also the URL segment.
    pub fn collection(self) -> &'static str {
        match self {
            EntityKind::Thing => "Things",
            EntityKind::Datastream => "Datastreams",
            EntityKind::Observation => "Observations",
            EntityKind::Sensor => "Sensors",
            EntityKind::ObservedProperty => "ObservedProperties",
        }
    }

    /// Properties usable in `$filter` and `$orderby`.
    pub fn properties(self) -> &'static [(&'static str, PropType)] {
        use PropType::*;
        match self {
            EntityKind::Thing | EntityKind::Datastream | EntityKind::Sensor => {
                &[("id", Number), ("name", Text), ("description", Text)]
            }
            EntityKind::Observation => &[
                ("id", Number),
                ("phenomenonTime", Time),
                ("resultTime", Time),
                ("result", Number),
            ],
            EntityKind::ObservedProperty => &[
                ("id", Number),
                ("name", Text),
                ("definition", Text),
                ("description", Text),
            ],
        }
    }

    pub fn property_type(self, name: &str) -> Option<PropType> {
        let name = if name == "@iot.id" { "id" } else { name };
        self.properties()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
    }

    /// Keys of the serialized document that `$select` may name, besides `id`.
    pub fn selectable(self) -> &'static [&'static str] {
        match self {
            EntityKind::Thing => &["name", "description", "properties"],
            EntityKind::Datastream => &[
                "name",
                "description",
                "unitOfMeasurement",
                "observationType",
            ],
            EntityKind::Observation => &["phenomenonTime", "resultTime", "result", "parameters"],
            EntityKind::Sensor => &["name", "description", "encodingType", "metadata"],
            EntityKind::ObservedProperty => &["name", "definition", "description"],
        }
    }

    pub fn navigations(self) -> &'static [(&'static str, EntityKind, Cardinality)] {
        use Cardinality::*;
        match self {
            EntityKind::Thing => &[("Datastreams", EntityKind::Datastream, Many)],
            EntityKind::Datastream => &[
                ("Thing", EntityKind::Thing, One),
                ("Sensor", EntityKind::Sensor, One),
                ("ObservedProperty", EntityKind::ObservedProperty, One),
                ("Observations", EntityKind::Observation, Many),
            ],
            EntityKind::Observation => &[("Datastream", EntityKind::Datastream, One)],
            EntityKind::Sensor | EntityKind::ObservedProperty => {
                &[("Datastreams", EntityKind::Datastream, Many)]
            }
        }
    }

    pub fn navigation(self, name: &str) -> Option<(EntityKind, Cardinality)> {
        self.navigations()
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, k, c)| (*k, *c))
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.collection())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThingRecord {
    pub id: u64,
    pub name: String,
    pub description: String,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitOfMeasurement {
    pub name: String,
    pub symbol: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatastreamRecord {
    pub id: u64,
    pub thing_id: u64,
    pub sensor_id: u64,
    pub observed_property_id: u64,
    pub name: String,
    pub description: String,
    pub unit: UnitOfMeasurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    pub id: u64,
    pub name: String,
    pub description: String,
    /// Link to the SensorML document.
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPropertyRecord {
    pub id: u64,
    pub name: String,
    pub definition: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRecord {
    pub id: u64,
    pub datastream_id: u64,
    /// Nanoseconds since the Unix epoch.
    pub phenomenon_time: i64,
    /// NaN when the value was removed by processing.
    pub result: f64,
    pub result_time: Option<i64>,
    pub flag: f32,
}

/// Value of a property for filtering and ordering. `None` is "missing".
#[derive(Debug, Clone, PartialEq)]
pub enum PropValue {
    Number(Option<f64>),
    Time(Option<i64>),
    Text(String),
}

pub trait Entity {
    fn kind(&self) -> EntityKind;
    fn id(&self) -> u64;
    fn prop(&self, name: &str) -> PropValue;
}

fn text_prop(name: &str, id: u64, fields: &[(&str, &String)]) -> PropValue {
    match name {
        "id" | "@iot.id" => PropValue::Number(Some(id as f64)),
        _ => PropValue::Text(
            fields
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| (*v).clone())
                .unwrap_or_default(),
        ),
    }
}

impl Entity for ThingRecord {
    fn kind(&self) -> EntityKind {
        EntityKind::Thing
    }
    fn id(&self) -> u64 {
        self.id
    }
    fn prop(&self, name: &str) -> PropValue {
        text_prop(name, self.id, &[("name", &self.name), ("description", &self.description)])
    }
}

impl Entity for DatastreamRecord {
    fn kind(&self) -> EntityKind {
        EntityKind::Datastream
    }
    fn id(&self) -> u64 {
        self.id
    }
    fn prop(&self, name: &str) -> PropValue {
        text_prop(name, self.id, &[("name", &self.name), ("description", &self.description)])
    }
}

impl Entity for SensorRecord {
    fn kind(&self) -> EntityKind {
        EntityKind::Sensor
    }
    fn id(&self) -> u64 {
        self.id
    }
    fn prop(&self, name: &str) -> PropValue {
        text_prop(name, self.id, &[("name", &self.name), ("description", &self.description)])
    }
}

impl Entity for ObservedPropertyRecord {
    fn kind(&self) -> EntityKind {
        EntityKind::ObservedProperty
    }
    fn id(&self) -> u64 {
        self.id
    }
    fn prop(&self, name: &str) -> PropValue {
        text_prop(
            name,
            self.id,
            &[
                ("name", &self.name),
                ("definition", &self.definition),
                ("description", &self.description),
            ],
        )
    }
}

impl Entity for ObservationRecord {
    fn kind(&self) -> EntityKind {
        EntityKind::Observation
    }
    fn id(&self) -> u64 {
        self.id
    }
    fn prop(&self, name: &str) -> PropValue {
        match name {
            "phenomenonTime" => PropValue::Time(Some(self.phenomenon_time)),
            "resultTime" => PropValue::Time(self.result_time),
            "result" => PropValue::Number((!self.result.is_nan()).then_some(self.result)),
            _ => PropValue::Number(Some(self.id as f64)),
        }
    }
}

/// RFC3339 with a `Z` suffix and only as many fractional digits as needed.
pub fn format_time(nanos: i64) -> String {
    DateTime::<Utc>::from_timestamp_nanos(nanos).to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Any entity, for code paths that handle all kinds uniformly.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Thing(ThingRecord),
    Datastream(DatastreamRecord),
    Observation(ObservationRecord),
    Sensor(SensorRecord),
    ObservedProperty(ObservedPropertyRecord),
}

macro_rules! each_record {
    ($rec:expr, $r:ident => $body:expr) => {
        match $rec {
            Record::Thing($r) => $body,
            Record::Datastream($r) => $body,
            Record::Observation($r) => $body,
            Record::Sensor($r) => $body,
            Record::ObservedProperty($r) => $body,
        }
    };
}

impl Entity for Record {
    fn kind(&self) -> EntityKind {
        each_record!(self, r => r.kind())
    }
    fn id(&self) -> u64 {
        each_record!(self, r => r.id())
    }
    fn prop(&self, name: &str) -> PropValue {
        each_record!(self, r => r.prop(name))
    }
}
