//! JSON documents for entities.

use fairstream_qc::FlagScheme;
use serde_json::{json, Map, Value};

use crate::model::{
    format_time, DatastreamRecord, Entity, EntityKind, ObservationRecord, ObservedPropertyRecord,
    Record, SensorRecord, ThingRecord,
};

pub const OBSERVATION_TYPE: &str =
    "http://www.opengis.net/def/observationType/OGC-OM/2.0/OM_Measurement";
pub const SENSOR_ENCODING: &str = "application/xml";

pub fn self_link(base: &str, kind: EntityKind, id: u64) -> String {
    format!("{base}/v1.1/{}({id})", kind.collection())
}

fn envelope(base: &str, kind: EntityKind, id: u64) -> Map<String, Value> {
    let mut doc = Map::new();
    doc.insert("@iot.id".into(), json!(id));
    doc.insert("@iot.selfLink".into(), json!(self_link(base, kind, id)));
    for (nav, _, _) in kind.navigations() {
        doc.insert(
            format!("{nav}@iot.navigationLink"),
            json!(format!("{}/{nav}", self_link(base, kind, id))),
        );
    }
    doc
}

fn number_or_null(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Flag label under `scheme`. Values outside the persistable range never
/// reach the store, so they are reported as unflagged.
pub fn flag_label(flag: f32, scheme: FlagScheme) -> String {
    scheme
        .encode(flag)
        .unwrap_or_else(|_| scheme.encode(fairstream_qc::UNFLAGGED).unwrap_or_default())
}

pub fn thing_document(base: &str, t: &ThingRecord) -> Map<String, Value> {
    let mut doc = envelope(base, t.kind(), t.id);
    doc.insert("name".into(), json!(t.name));
    doc.insert("description".into(), json!(t.description));
    doc.insert("properties".into(), Value::Object(t.properties.clone()));
    doc
}

pub fn datastream_document(base: &str, d: &DatastreamRecord) -> Map<String, Value> {
    let mut doc = envelope(base, d.kind(), d.id);
    doc.insert("name".into(), json!(d.name));
    doc.insert("description".into(), json!(d.description));
    doc.insert(
        "unitOfMeasurement".into(),
        json!({ "name": d.unit.name, "symbol": d.unit.symbol, "definition": d.unit.definition }),
    );
    doc.insert("observationType".into(), json!(OBSERVATION_TYPE));
    doc
}

pub fn observation_document(
    base: &str,
    o: &ObservationRecord,
    scheme: FlagScheme,
) -> Map<String, Value> {
    let mut doc = envelope(base, o.kind(), o.id);
    doc.insert("phenomenonTime".into(), json!(format_time(o.phenomenon_time)));
    doc.insert(
        "resultTime".into(),
        o.result_time.map_or(Value::Null, |t| json!(format_time(t))),
    );
    doc.insert("result".into(), number_or_null(o.result));
    doc.insert(
        "parameters".into(),
        json!({ "flag": flag_label(o.flag, scheme), "flag_scheme": scheme.as_str() }),
    );
    doc
}

pub fn sensor_document(base: &str, s: &SensorRecord) -> Map<String, Value> {
    let mut doc = envelope(base, s.kind(), s.id);
    doc.insert("name".into(), json!(s.name));
    doc.insert("description".into(), json!(s.description));
    doc.insert("encodingType".into(), json!(SENSOR_ENCODING));
    doc.insert("metadata".into(), json!(s.metadata));
    doc
}

pub fn observed_property_document(base: &str, p: &ObservedPropertyRecord) -> Map<String, Value> {
    let mut doc = envelope(base, p.kind(), p.id);
    doc.insert("name".into(), json!(p.name));
    doc.insert("definition".into(), json!(p.definition));
    doc.insert("description".into(), json!(p.description));
    doc
}

pub fn document(base: &str, r: &Record, scheme: FlagScheme) -> Map<String, Value> {
    match r {
        Record::Thing(t) => thing_document(base, t),
        Record::Datastream(d) => datastream_document(base, d),
        Record::Observation(o) => observation_document(base, o, scheme),
        Record::Sensor(s) => sensor_document(base, s),
        Record::ObservedProperty(p) => observed_property_document(base, p),
    }
}

/// Restricts a document to `select`. `@iot.id` and `@iot.selfLink` are always
/// kept; navigation links are dropped.
pub fn apply_select(doc: Map<String, Value>, select: &[String]) -> Map<String, Value> {
    doc.into_iter()
        .filter(|(k, _)| {
            k == "@iot.id" || k == "@iot.selfLink" || select.iter().any(|s| s == k)
        })
        .collect()
}
