//! Request resolution: resource paths, collection listing with paging, and
//! `$expand`.

use std::cmp::Ordering;

use serde_json::{json, Map, Value};

use crate::error::StaError;
use crate::model::{
    Cardinality, DatastreamRecord, Entity, EntityKind, ObservationRecord, ObservedPropertyRecord,
    Record, SensorRecord, ThingRecord,
};
use crate::query::{order_values, parse_query, CmpOp, Direction, Filter, Literal, Operand, StaQuery};
use crate::serialize::{apply_select, document};

/// Inclusive phenomenon-time bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub const ALL: TimeRange = TimeRange {
        start: i64::MIN,
        end: i64::MAX,
    };

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }
}

pub type SourceResult<T> = Result<T, StaError>;

/// Read access to everything the API exposes. Implementations must present
/// a consistent snapshot per call.
pub trait StaSource {
    fn things(&self) -> SourceResult<Vec<ThingRecord>>;
    fn thing(&self, id: u64) -> SourceResult<Option<ThingRecord>>;
    fn datastreams(&self) -> SourceResult<Vec<DatastreamRecord>>;
    fn datastream(&self, id: u64) -> SourceResult<Option<DatastreamRecord>>;
    fn sensors(&self) -> SourceResult<Vec<SensorRecord>>;
    fn sensor(&self, id: u64) -> SourceResult<Option<SensorRecord>>;
    fn observed_properties(&self) -> SourceResult<Vec<ObservedPropertyRecord>>;
    fn observed_property(&self, id: u64) -> SourceResult<Option<ObservedPropertyRecord>>;
    fn observation(&self, id: u64) -> SourceResult<Option<ObservationRecord>>;
    /// Observations of one datastream within `range`, ordered by
    /// phenomenon time (descending when `descending`), after skipping
    /// `offset` and returning at most `limit`.
    fn observations(
        &self,
        datastream: u64,
        range: TimeRange,
        descending: bool,
        offset: usize,
        limit: usize,
    ) -> SourceResult<Vec<ObservationRecord>>;
}

/// Parent of a navigated collection, e.g. `Things(1)/Datastreams`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub parent: EntityKind,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resource {
    Root,
    Collection {
        kind: EntityKind,
        scope: Option<Scope>,
    },
    Entity {
        kind: EntityKind,
        id: u64,
        /// For single-valued navigation such as `Datastreams(1)/Thing`.
        via: Option<Scope>,
    },
}

fn kind_by_collection(name: &str) -> Option<EntityKind> {
    EntityKind::ALL.into_iter().find(|k| k.collection() == name)
}

fn parse_segment(seg: &str) -> Option<(EntityKind, Option<u64>)> {
    match seg.split_once('(') {
        None => kind_by_collection(seg).map(|k| (k, None)),
        Some((name, rest)) => {
            let id = rest.strip_suffix(')')?;
            if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Some((kind_by_collection(name)?, Some(id.parse().ok()?)))
        }
    }
}

/// Parses the part of the path after `/v1.1`.
pub fn parse_path(path: &str) -> Result<Resource, StaError> {
    let unknown = || StaError::UnknownPath(path.to_string());
    let segs: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
    match segs.as_slice() {
        [] => Ok(Resource::Root),
        [one] => match parse_segment(one).ok_or_else(unknown)? {
            (kind, None) => Ok(Resource::Collection { kind, scope: None }),
            (kind, Some(id)) => Ok(Resource::Entity { kind, id, via: None }),
        },
        [first, nav] => {
            let (parent, Some(id)) = parse_segment(first).ok_or_else(unknown)? else {
                return Err(unknown());
            };
            let (kind, card) = parent.navigation(nav).ok_or_else(unknown)?;
            let scope = Some(Scope { parent, id });
            Ok(match card {
                Cardinality::Many => Resource::Collection { kind, scope },
                // Resolved to a concrete id when served.
                Cardinality::One => Resource::Entity { kind, id: 0, via: scope },
            })
        }
        _ => Err(unknown()),
    }
}

/// Serves read requests against a [`StaSource`].
pub struct StaService<'a, S: StaSource + ?Sized> {
    pub source: &'a S,
    /// Externally visible URL prefix in front of `/v1.1`.
    pub base_url: &'a str,
    pub max_top: usize,
}

impl<'a, S: StaSource + ?Sized> StaService<'a, S> {
    pub fn new(source: &'a S, base_url: &'a str) -> Self {
        Self {
            source,
            base_url,
            max_top: crate::query::DEFAULT_MAX_TOP,
        }
    }

    /// Handles `GET /v1.1/<path>?<raw_query>`.
    pub fn get(&self, path: &str, raw_query: &str) -> Result<Value, StaError> {
        let resource = parse_path(path)?;
        match resource {
            Resource::Root => Ok(root_document(self.base_url)),
            Resource::Collection { kind, scope } => {
                let q = parse_query(raw_query, kind, self.max_top)?;
                self.list_collection(kind, scope, &q, path)
            }
            Resource::Entity { kind, id, via } => {
                let q = parse_query(raw_query, kind, self.max_top)?;
                let record = match via {
                    None => self.entity(kind, id)?,
                    Some(scope) => self.navigate_one(scope, kind)?,
                };
                self.render(&record, &q)
            }
        }
    }

    fn not_found(kind: EntityKind, id: u64) -> StaError {
        StaError::NotFound { kind, id }
    }

    pub fn entity(&self, kind: EntityKind, id: u64) -> Result<Record, StaError> {
        let s = self.source;
        let found = match kind {
            EntityKind::Thing => s.thing(id)?.map(Record::Thing),
            EntityKind::Datastream => s.datastream(id)?.map(Record::Datastream),
            EntityKind::Observation => s.observation(id)?.map(Record::Observation),
            EntityKind::Sensor => s.sensor(id)?.map(Record::Sensor),
            EntityKind::ObservedProperty => s.observed_property(id)?.map(Record::ObservedProperty),
        };
        found.ok_or_else(|| Self::not_found(kind, id))
    }

    fn navigate_one(&self, scope: Scope, kind: EntityKind) -> Result<Record, StaError> {
        let parent = self.entity(scope.parent, scope.id)?;
        let id = match (&parent, kind) {
            (Record::Datastream(d), EntityKind::Thing) => d.thing_id,
            (Record::Datastream(d), EntityKind::Sensor) => d.sensor_id,
            (Record::Datastream(d), EntityKind::ObservedProperty) => d.observed_property_id,
            (Record::Observation(o), EntityKind::Datastream) => o.datastream_id,
            _ => return Err(StaError::UnknownPath(format!("{}/{kind}", scope.parent))),
        };
        self.entity(kind, id)
    }

    /// All members of a collection, unordered.
    fn members(&self, kind: EntityKind, scope: Option<Scope>) -> Result<Vec<Record>, StaError> {
        let s = self.source;
        if let Some(scope) = scope {
            // 404 for a missing parent even when the collection would be empty.
            self.entity(scope.parent, scope.id)?;
        }
        let ds_filter = |d: &DatastreamRecord| match scope {
            None => true,
            Some(Scope { parent: EntityKind::Thing, id }) => d.thing_id == id,
            Some(Scope { parent: EntityKind::Sensor, id }) => d.sensor_id == id,
            Some(Scope { parent: EntityKind::ObservedProperty, id }) => d.observed_property_id == id,
            Some(_) => false,
        };
        Ok(match kind {
            EntityKind::Thing => s.things()?.into_iter().map(Record::Thing).collect(),
            EntityKind::Datastream => s
                .datastreams()?
                .into_iter()
                .filter(ds_filter)
                .map(Record::Datastream)
                .collect(),
            EntityKind::Sensor => s.sensors()?.into_iter().map(Record::Sensor).collect(),
            EntityKind::ObservedProperty => s
                .observed_properties()?
                .into_iter()
                .map(Record::ObservedProperty)
                .collect(),
            EntityKind::Observation => {
                let streams: Vec<u64> = match scope {
                    Some(Scope { parent: EntityKind::Datastream, id }) => vec![id],
                    _ => s.datastreams()?.iter().map(|d| d.id).collect(),
                };
                let mut out = Vec::new();
                for ds in streams {
                    out.extend(
                        s.observations(ds, TimeRange::ALL, false, 0, usize::MAX)?
                            .into_iter()
                            .map(Record::Observation),
                    );
                }
                out
            }
        })
    }

    /// One page: `filter → orderby → skip → top`. Returns the page and
    /// whether more results remain.
    pub fn select_page(
        &self,
        kind: EntityKind,
        scope: Option<Scope>,
        q: &StaQuery,
    ) -> Result<(Vec<Record>, bool), StaError> {
        if let (EntityKind::Observation, Some(Scope { parent: EntityKind::Datastream, id })) =
            (kind, scope)
        {
            if let Some(page) = self.pushdown(id, q)? {
                return Ok(page);
            }
        }
        let mut items = self.members(kind, scope)?;
        if let Some(f) = &q.filter {
            items.retain(|r| f.matches(r));
        }
        items.sort_by(|a, b| compare_records(a, b, &q.orderby));
        let more = items.len() > q.skip.saturating_add(q.top);
        let page = items.into_iter().skip(q.skip).take(q.top).collect();
        Ok((page, more))
    }

    /// Serves time-bounded, time-ordered observation pages straight from the
    /// source. `None` when the query needs a full scan.
    fn pushdown(&self, ds: u64, q: &StaQuery) -> Result<Option<(Vec<Record>, bool)>, StaError> {
        let descending = match q.orderby.as_slice() {
            [] => false,
            [(p, dir)] if p == "phenomenonTime" => *dir == Direction::Desc,
            _ => return Ok(None),
        };
        let mut range = TimeRange::ALL;
        if let Some(f) = &q.filter {
            if !narrow(f, &mut range) {
                return Ok(None);
            }
        }
        if self.source.datastream(ds)?.is_none() {
            return Err(Self::not_found(EntityKind::Datastream, ds));
        }
        if range.is_empty() || q.top == 0 && q.skip == 0 {
            let more = !range.is_empty()
                && !self.source.observations(ds, range, descending, 0, 1)?.is_empty();
            return Ok(Some((Vec::new(), more)));
        }
        let mut rows = self
            .source
            .observations(ds, range, descending, q.skip, q.top.saturating_add(1))?;
        let more = rows.len() > q.top;
        rows.truncate(q.top);
        Ok(Some((rows.into_iter().map(Record::Observation).collect(), more)))
    }

    pub fn list_collection(
        &self,
        kind: EntityKind,
        scope: Option<Scope>,
        q: &StaQuery,
        path: &str,
    ) -> Result<Value, StaError> {
        let (page, more) = self.select_page(kind, scope, q)?;
        let value = page
            .iter()
            .map(|r| self.render(r, q))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Map::new();
        if more {
            out.insert(
                "@iot.nextLink".into(),
                json!(self.next_link(path, q, q.skip.saturating_add(q.top))),
            );
        }
        out.insert("value".into(), Value::Array(value));
        Ok(Value::Object(out))
    }

    fn next_link(&self, path: &str, q: &StaQuery, skip: usize) -> String {
        let mut ser = url::form_urlencoded::Serializer::new(String::new());
        for (k, v) in &q.carried {
            ser.append_pair(k, v);
        }
        ser.append_pair("$top", &q.top.to_string());
        ser.append_pair("$skip", &skip.to_string());
        format!("{}/v1.1/{}?{}", self.base_url, path.trim_matches('/'), ser.finish())
    }

    /// Serializes one entity with `$select` and `$expand` applied.
    pub fn render(&self, record: &Record, q: &StaQuery) -> Result<Value, StaError> {
        let mut doc = document(self.base_url, record, q.flag_scheme);
        if let Some(select) = &q.select {
            doc = apply_select(doc, select);
        }
        let kind = record.kind();
        for nav in &q.expand {
            let (target, card) = kind
                .navigation(nav)
                .ok_or_else(|| crate::error::QueryError::UnknownNavigation(nav.clone()))?;
            let scope = Scope {
                parent: kind,
                id: record.id(),
            };
            let inner = StaQuery {
                flag_scheme: q.flag_scheme,
                carried: q.carried.iter().filter(|(k, _)| k == "flag_scheme").cloned().collect(),
                ..StaQuery::defaults()
            };
            match card {
                Cardinality::One => {
                    let related = self.navigate_one(scope, target)?;
                    doc.insert(
                        nav.clone(),
                        Value::Object(document(self.base_url, &related, q.flag_scheme)),
                    );
                }
                Cardinality::Many => {
                    let (page, more) = self.select_page(target, Some(scope), &inner)?;
                    let items = page
                        .iter()
                        .map(|r| Value::Object(document(self.base_url, r, q.flag_scheme)))
                        .collect();
                    doc.insert(nav.clone(), Value::Array(items));
                    if more {
                        let path = format!("{}({})/{nav}", kind.collection(), record.id());
                        doc.insert(
                            format!("{nav}@iot.nextLink"),
                            json!(self.next_link(&path, &inner, inner.top)),
                        );
                    }
                }
            }
        }
        Ok(Value::Object(doc))
    }
}

/// Intersects `range` with a conjunction of `phenomenonTime` comparisons.
/// Returns false if `f` has any other shape.
fn narrow(f: &Filter, range: &mut TimeRange) -> bool {
    match f {
        Filter::And(a, b) => narrow(a, range) && narrow(b, range),
        Filter::Compare(l, op, r) => {
            let (op, t) = match (l, r) {
                (Operand::Property(p), Operand::Literal(Literal::Time(t))) if p == "phenomenonTime" => {
                    (*op, *t)
                }
                (Operand::Literal(Literal::Time(t)), Operand::Property(p)) if p == "phenomenonTime" => {
                    (op.flipped(), *t)
                }
                _ => return false,
            };
            const EMPTY: TimeRange = TimeRange { start: 1, end: 0 };
            match op {
                CmpOp::Eq => {
                    range.start = range.start.max(t);
                    range.end = range.end.min(t);
                }
                CmpOp::Ge => range.start = range.start.max(t),
                CmpOp::Le => range.end = range.end.min(t),
                CmpOp::Gt => match t.checked_add(1) {
                    Some(s) => range.start = range.start.max(s),
                    None => *range = EMPTY,
                },
                CmpOp::Lt => match t.checked_sub(1) {
                    Some(e) => range.end = range.end.min(e),
                    None => *range = EMPTY,
                },
                CmpOp::Ne => return false,
            }
            true
        }
        _ => false,
    }
}

fn default_order(a: &Record, b: &Record) -> Ordering {
    match (a, b) {
        (Record::Observation(x), Record::Observation(y)) => x
            .phenomenon_time
            .cmp(&y.phenomenon_time)
            .then(x.id.cmp(&y.id)),
        _ => a.id().cmp(&b.id()),
    }
}

fn compare_records(a: &Record, b: &Record, orderby: &[(String, Direction)]) -> Ordering {
    orderby
        .iter()
        .map(|(p, dir)| {
            let ord = order_values(&a.prop(p), &b.prop(p));
            match dir {
                Direction::Asc => ord,
                Direction::Desc => ord.reverse(),
            }
        })
        .find(|o| o.is_ne())
        .unwrap_or_else(|| default_order(a, b))
}

pub const CONFORMANCE: &[&str] = &[
    "http://www.opengis.net/spec/iot_sensing/1.1/req/datamodel",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/resource-path/resource-path-to-entities",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/top",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/skip",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/orderby",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/filter",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/select",
    "http://www.opengis.net/spec/iot_sensing/1.1/req/request-data/expand",
];

pub fn root_document(base: &str) -> Value {
    let value: Vec<Value> = EntityKind::ALL
        .iter()
        .map(|k| json!({ "name": k.collection(), "url": format!("{base}/v1.1/{}", k.collection()) }))
        .collect();
    json!({
        "value": value,
        "serverSettings": {
            "conformance": CONFORMANCE,
            "fairstream": {
                "queryOptions": ["$top", "$skip", "$orderby", "$filter", "$select", "$expand"],
                "filterOperators": ["eq", "ne", "gt", "ge", "lt", "le", "and", "or", "not"],
                "expandDepth": 1,
                "maxTop": crate::query::DEFAULT_MAX_TOP,
                "flagSchemes": ["simple", "float"],
            }
        }
    })
}
