//! The platform as a SensorThings data source: Things and Datastreams from
//! the platform records, Sensors from the device registry, Observations
//! from the store.

use fairstream_sta::{
    DatastreamRecord, EntityKind, ObservationRecord, ObservedPropertyRecord, SensorRecord, StaError,
    StaSource, ThingRecord, TimeRange, UnitOfMeasurement,
};
use fairstream_store::{Order, RangeQuery, StoredObservation, UNFLAGGED};
use serde_json::Value;
use uuid::Uuid;

use crate::platform::Platform;
use crate::state::{DatastreamDecl, PlatformState, Thing};

/// Sensor of datastreams that name no registered device.
pub const UNREGISTERED_SENSOR_ID: u64 = 0;

const UCUM_DEFINITION: &str = "http://unitsofmeasure.org/ucum.html";

type SourceResult<T> = Result<T, StaError>;

fn backend(e: impl std::fmt::Display) -> StaError {
    StaError::Backend(e.to_string())
}

fn to_thing(t: &Thing) -> ThingRecord {
    let mut properties = t.properties.clone();
    properties.insert("uuid".into(), Value::String(t.uuid.to_string()));
    ThingRecord {
        id: t.id,
        name: t.name.clone(),
        description: t.description.clone(),
        properties,
    }
}

fn to_datastream(s: &PlatformState, d: &DatastreamDecl) -> Option<DatastreamRecord> {
    let thing = s.things.get(&d.thing_uuid)?;
    Some(DatastreamRecord {
        id: d.id,
        thing_id: thing.id,
        sensor_id: d.device_id.unwrap_or(UNREGISTERED_SENSOR_ID),
        observed_property_id: d.observed_property_id,
        name: d.name.clone(),
        description: d.description.clone(),
        unit: UnitOfMeasurement {
            name: d.unit.clone(),
            symbol: d.unit.clone(),
            definition: UCUM_DEFINITION.to_string(),
        },
    })
}

fn to_observation(datastream_id: u64, o: &StoredObservation) -> ObservationRecord {
    ObservationRecord {
        id: o.id,
        datastream_id,
        phenomenon_time: o.phenomenon_time,
        result: o.result,
        result_time: Some(o.result_time),
        flag: o.flag.unwrap_or(UNFLAGGED),
    }
}

fn unregistered_sensor() -> SensorRecord {
    SensorRecord {
        id: UNREGISTERED_SENSOR_ID,
        name: "unregistered".into(),
        description: "Datastreams without a registered device".into(),
        metadata: String::new(),
    }
}

/// Read view over all Things, or over the one a dashboard share token
/// exposes.
pub struct PlatformSource<'a> {
    platform: &'a Platform,
    scope: Option<Uuid>,
}

impl<'a> PlatformSource<'a> {
    pub fn all(platform: &'a Platform) -> Self {
        Self { platform, scope: None }
    }

    pub fn scoped(platform: &'a Platform, thing: Uuid) -> Self {
        Self {
            platform,
            scope: Some(thing),
        }
    }

    fn visible(&self, thing: &Uuid) -> bool {
        self.scope.is_none_or(|s| s == *thing)
    }

    fn decls(&self) -> Vec<DatastreamDecl> {
        self.platform.read_state(|s| {
            s.datastreams
                .values()
                .filter(|d| self.visible(&d.thing_uuid))
                .cloned()
                .collect()
        })
    }

    fn sensor_record(&self, id: u64) -> SourceResult<Option<SensorRecord>> {
        let used = self.decls().iter().any(|d| d.device_id.unwrap_or(UNREGISTERED_SENSOR_ID) == id);
        if id == UNREGISTERED_SENSOR_ID {
            return Ok(used.then(unregistered_sensor));
        }
        if !used && !self.all_things_visible() {
            return Ok(None);
        }
        match self.platform.registry().device(id) {
            Ok(dev) => Ok(Some(SensorRecord {
                id: dev.id,
                name: dev.short_name.clone(),
                description: dev.description.clone(),
                metadata: format!("{}/registry/v1/devices/{}/sensorml", self.platform.base_url(), dev.id),
            })),
            Err(fairstream_registry::RegistryError::UnknownDevice(_)) => Ok(None),
            Err(e) => Err(backend(e)),
        }
    }

    fn all_things_visible(&self) -> bool {
        self.scope.is_none()
    }

    fn thing_records(&self) -> Vec<ThingRecord> {
        self.platform.read_state(|s| {
            s.things.values().filter(|t| self.visible(&t.uuid)).map(to_thing).collect()
        })
    }

    fn thing_record(&self, id: u64) -> Option<ThingRecord> {
        self.platform.read_state(|s| {
            s.thing_by_id(id).filter(|t| self.visible(&t.uuid)).map(to_thing)
        })
    }

    fn datastream_records(&self) -> Vec<DatastreamRecord> {
        self.platform.read_state(|s| {
            s.datastreams
                .values()
                .filter(|d| self.visible(&d.thing_uuid))
                .filter_map(|d| to_datastream(s, d))
                .collect()
        })
    }

    fn datastream_record(&self, id: u64) -> Option<DatastreamRecord> {
        self.platform.read_state(|s| {
            s.datastreams
                .get(&id)
                .filter(|d| self.visible(&d.thing_uuid))
                .and_then(|d| to_datastream(s, d))
        })
    }

    fn sensor_records(&self) -> SourceResult<Vec<SensorRecord>> {
        let mut ids: Vec<u64> = if self.all_things_visible() {
            self.platform.registry().devices().iter().map(|d| d.id).collect()
        } else {
            Vec::new()
        };
        ids.extend(self.decls().iter().map(|d| d.device_id.unwrap_or(UNREGISTERED_SENSOR_ID)));
        ids.sort_unstable();
        ids.dedup();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(self.sensor_record(id)?);
        }
        Ok(out)
    }

    fn observed_property_records(&self) -> Vec<ObservedPropertyRecord> {
        let used: Vec<u64> = self.decls().iter().map(|d| d.observed_property_id).collect();
        let everything = self.all_things_visible();
        self.platform.read_state(|s| {
            s.observed_properties
                .values()
                .filter(|p| everything || used.contains(&p.id))
                .map(|p| ObservedPropertyRecord {
                    id: p.id,
                    name: p.name.clone(),
                    definition: p.definition.clone(),
                    description: String::new(),
                })
                .collect()
        })
    }

    fn observation_record(&self, id: u64) -> Option<ObservationRecord> {
        let (ds, obs) = self.platform.store().observation(id)?;
        self.datastream_record(ds)?;
        Some(to_observation(ds, &obs))
    }

    fn observation_records(
        &self,
        datastream: u64,
        range: TimeRange,
        descending: bool,
        offset: usize,
        limit: usize,
    ) -> SourceResult<Vec<ObservationRecord>> {
        if self.datastream_record(datastream).is_none() {
            return Err(StaError::NotFound {
                kind: EntityKind::Datastream,
                id: datastream,
            });
        }
        if range.is_empty() {
            return Ok(Vec::new());
        }
        let q = RangeQuery::new(range.start, range.end.saturating_add(1))
            .order(if descending { Order::Desc } else { Order::Asc })
            .page(Some(limit), offset)
            .with_flags();
        let points = self.platform.store().query_range(datastream, q).map_err(backend)?;
        Ok(points.iter().map(|o| to_observation(datastream, o)).collect())
    }
}

impl StaSource for PlatformSource<'_> {
    fn things(&self) -> SourceResult<Vec<ThingRecord>> {
        Ok(self.thing_records())
    }
    fn thing(&self, id: u64) -> SourceResult<Option<ThingRecord>> {
        Ok(self.thing_record(id))
    }
    fn datastreams(&self) -> SourceResult<Vec<DatastreamRecord>> {
        Ok(self.datastream_records())
    }
    fn datastream(&self, id: u64) -> SourceResult<Option<DatastreamRecord>> {
        Ok(self.datastream_record(id))
    }
    fn sensors(&self) -> SourceResult<Vec<SensorRecord>> {
        self.sensor_records()
    }
    fn sensor(&self, id: u64) -> SourceResult<Option<SensorRecord>> {
        self.sensor_record(id)
    }
    fn observed_properties(&self) -> SourceResult<Vec<ObservedPropertyRecord>> {
        Ok(self.observed_property_records())
    }
    fn observed_property(&self, id: u64) -> SourceResult<Option<ObservedPropertyRecord>> {
        Ok(self.observed_property_records().into_iter().find(|p| p.id == id))
    }
    fn observation(&self, id: u64) -> SourceResult<Option<ObservationRecord>> {
        Ok(self.observation_record(id))
    }
    fn observations(
        &self,
        datastream: u64,
        range: TimeRange,
        descending: bool,
        offset: usize,
        limit: usize,
    ) -> SourceResult<Vec<ObservationRecord>> {
        self.observation_records(datastream, range, descending, offset, limit)
    }
}
