//! Query/data pairs against an in-memory source: filter results against a
//! direct evaluator, paged walks against the unpaged result. Then random
//! byte strings through the query parser.

use std::collections::{BTreeMap, HashSet};
use std::panic::{self, AssertUnwindSafe};

use fairstream_qc::{BAD, DOUBTFUL, GOOD, UNFLAGGED};
use fairstream_sta::{
    format_time, parse_query, DatastreamRecord, EntityKind, ObservationRecord, ObservedPropertyRecord,
    QueryError, SensorRecord, StaError, StaService, StaSource, ThingRecord, TimeRange, UnitOfMeasurement,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

const BASE: &str = "http://acceptance";
const PAIRS: u64 = 1000;
const FUZZ_INPUTS: usize = 100_000;
const MAX_TOP: usize = 1000;
const SECOND: i64 = 1_000_000_000;
const T0: i64 = 1_714_521_600 * SECOND;

/// One Thing with one datastream holding the generated observations.
struct MemSource {
    observations: Vec<ObservationRecord>,
}

impl StaSource for MemSource {
    fn things(&self) -> Result<Vec<ThingRecord>, StaError> {
        Ok(vec![ThingRecord {
            id: 1,
            name: "logger".into(),
            description: String::new(),
            properties: Map::new(),
        }])
    }
    fn thing(&self, id: u64) -> Result<Option<ThingRecord>, StaError> {
        Ok(self.things()?.into_iter().find(|t| t.id == id))
    }
    fn datastreams(&self) -> Result<Vec<DatastreamRecord>, StaError> {
        Ok(vec![DatastreamRecord {
            id: 1,
            thing_id: 1,
            sensor_id: 1,
            observed_property_id: 1,
            name: "temp".into(),
            description: String::new(),
            unit: UnitOfMeasurement { name: "degree Celsius".into(), symbol: "Cel".into(), definition: String::new() },
        }])
    }
    fn datastream(&self, id: u64) -> Result<Option<DatastreamRecord>, StaError> {
        Ok(self.datastreams()?.into_iter().find(|d| d.id == id))
    }
    fn sensors(&self) -> Result<Vec<SensorRecord>, StaError> {
        Ok(vec![SensorRecord {
            id: 1,
            name: "probe".into(),
            description: String::new(),
            metadata: format!("{BASE}/registry/v1/devices/1/sensorml"),
        }])
    }
    fn sensor(&self, id: u64) -> Result<Option<SensorRecord>, StaError> {
        Ok(self.sensors()?.into_iter().find(|s| s.id == id))
    }
    fn observed_properties(&self) -> Result<Vec<ObservedPropertyRecord>, StaError> {
        Ok(vec![ObservedPropertyRecord {
            id: 1,
            name: "air temperature".into(),
            definition: "urn:example:air_temperature".into(),
            description: String::new(),
        }])
    }
    fn observed_property(&self, id: u64) -> Result<Option<ObservedPropertyRecord>, StaError> {
        Ok(self.observed_properties()?.into_iter().find(|p| p.id == id))
    }
    fn observation(&self, id: u64) -> Result<Option<ObservationRecord>, StaError> {
        Ok(self.observations.iter().find(|o| o.id == id).copied())
    }
    fn observations(
        &self,
        datastream: u64,
        range: TimeRange,
        descending: bool,
        offset: usize,
        limit: usize,
    ) -> Result<Vec<ObservationRecord>, StaError> {
        let mut rows: Vec<ObservationRecord> = self
            .observations
            .iter()
            .filter(|o| o.datastream_id == datastream && (range.start..=range.end).contains(&o.phenomenon_time))
            .copied()
            .collect();
        if descending {
            rows.reverse();
        }
        Ok(rows.into_iter().skip(offset).take(limit).collect())
    }
}

fn random_observations(rng: &mut ChaCha8Rng) -> Vec<ObservationRecord> {
    let n = rng.gen_range(0..80);
    let mut slots: Vec<i64> = (0..250).collect();
    let mut out: Vec<ObservationRecord> = (1..=n)
        .map(|id| {
            let slot = slots.swap_remove(rng.gen_range(0..slots.len()));
            ObservationRecord {
                id,
                datastream_id: 1,
                phenomenon_time: T0 + slot * SECOND,
                result: match rng.gen_range(0..10) {
                    0 => f64::NAN,
                    1..=3 => rng.gen_range(0..5) as f64,
                    _ => rng.gen_range(-20.0..40.0),
                },
                result_time: rng.gen_bool(0.7).then(|| T0 + rng.gen_range(0..250) * SECOND),
                flag: [UNFLAGGED, GOOD, DOUBTFUL, BAD][rng.gen_range(0..4)],
            }
        })
        .collect();
    out.sort_by_key(|o| o.phenomenon_time);
    out
}

const OPS: [&str; 6] = ["eq", "ne", "gt", "ge", "lt", "le"];

fn holds<T: PartialOrd>(a: T, op: &str, b: T) -> bool {
    match op {
        "eq" => a == b,
        "ne" => a != b,
        "gt" => a > b,
        "ge" => a >= b,
        "lt" => a < b,
        "le" => a <= b,
        _ => unreachable!(),
    }
}

fn mirrored(op: &str) -> &str {
    match op {
        "gt" => "lt",
        "ge" => "le",
        "lt" => "gt",
        "le" => "ge",
        o => o,
    }
}

/// Random filter tree that renders to `$filter` text and evaluates itself.
enum GenFilter {
    Num { prop: &'static str, op: &'static str, lit: f64, flipped: bool },
    Time { prop: &'static str, op: &'static str, lit: i64, flipped: bool },
    Not(Box<GenFilter>),
    And(Box<GenFilter>, Box<GenFilter>),
    Or(Box<GenFilter>, Box<GenFilter>),
}

impl GenFilter {
    fn random(rng: &mut ChaCha8Rng, depth: u32) -> Self {
        if depth == 0 || rng.gen_bool(0.4) {
            let op = OPS[rng.gen_range(0..6)];
            let flipped = rng.gen_bool(0.3);
            if rng.gen_bool(0.4) {
                let prop = if rng.gen_bool(0.7) { "phenomenonTime" } else { "resultTime" };
                let lit = T0 + rng.gen_range(-5..255) * SECOND + rng.gen_range(0..2) * SECOND / 2;
                return GenFilter::Time { prop, op, lit, flipped };
            }
            let prop = if rng.gen_bool(0.8) { "result" } else { "id" };
            let lit = if rng.gen_bool(0.5) {
                rng.gen_range(-2..8) as f64
            } else {
                (rng.gen_range(-25.0..45.0f64) * 100.0).round() / 100.0
            };
            return GenFilter::Num { prop, op, lit, flipped };
        }
        let pick = rng.gen_range(0..3);
        let a = Box::new(Self::random(rng, depth - 1));
        if pick == 0 {
            return GenFilter::Not(a);
        }
        let b = Box::new(Self::random(rng, depth - 1));
        if pick == 1 {
            GenFilter::And(a, b)
        } else {
            GenFilter::Or(a, b)
        }
    }

    fn render(&self) -> String {
        let cmp = |prop: &str, op: &str, lit: String, flipped: bool| {
            if flipped {
                format!("{lit} {} {prop}", mirrored(op))
            } else {
                format!("{prop} {op} {lit}")
            }
        };
        match self {
            GenFilter::Num { prop, op, lit, flipped } => cmp(prop, op, lit.to_string(), *flipped),
            GenFilter::Time { prop, op, lit, flipped } => cmp(prop, op, format_time(*lit), *flipped),
            GenFilter::Not(f) => format!("not ({})", f.render()),
            GenFilter::And(a, b) => format!("({}) and ({})", a.render(), b.render()),
            GenFilter::Or(a, b) => format!("({}) or ({})", a.render(), b.render()),
        }
    }

    /// Comparisons against NaN results or absent result times are false.
    fn eval(&self, o: &ObservationRecord) -> bool {
        match self {
            GenFilter::Num { prop, op, lit, .. } => {
                let v = if *prop == "id" { o.id as f64 } else { o.result };
                !v.is_nan() && holds(v, op, *lit)
            }
            GenFilter::Time { prop, op, lit, .. } => {
                let v = if *prop == "phenomenonTime" { Some(o.phenomenon_time) } else { o.result_time };
                v.is_some_and(|v| holds(v, op, *lit))
            }
            GenFilter::Not(f) => !f.eval(o),
            GenFilter::And(a, b) => a.eval(o) && b.eval(o),
            GenFilter::Or(a, b) => a.eval(o) || b.eval(o),
        }
    }
}

fn encode(pairs: &[(&str, String)]) -> String {
    let mut ser = url::form_urlencoded::Serializer::new(String::new());
    for (k, v) in pairs {
        ser.append_pair(k, v);
    }
    ser.finish()
}

fn ids(page: &Value) -> Vec<u64> {
    page["value"].as_array().unwrap().iter().map(|v| v["@iot.id"].as_u64().unwrap()).collect()
}

fn walk_pages(svc: &StaService<MemSource>, path: &str, query: &str) -> Vec<Vec<u64>> {
    let mut pages = Vec::new();
    let mut page = svc.get(path, query).unwrap();
    loop {
        pages.push(ids(&page));
        let Some(next) = page.get("@iot.nextLink").and_then(Value::as_str) else {
            return pages;
        };
        let (path, query) = next.split_once('?').unwrap();
        page = svc.get(path.strip_prefix(&format!("{BASE}/v1.1/")).unwrap(), query).unwrap();
        assert!(pages.len() <= MAX_TOP, "runaway pagination");
    }
}

fn query_data_pairs() -> usize {
    let mut pages_walked = 0;
    for seed in 0..PAIRS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57A0_0000 + seed);
        let source = MemSource { observations: random_observations(&mut rng) };
        let svc = StaService::new(&source, BASE);

        let filter = rng.gen_bool(0.85).then(|| GenFilter::random(&mut rng, 3));
        let orderby = match rng.gen_range(0..4) {
            0 => None,
            1 => Some("phenomenonTime desc"),
            2 => Some("result asc"),
            _ => Some("resultTime desc,result asc"),
        };
        let top = rng.gen_range(1..15usize);
        let mut pairs = Vec::new();
        if let Some(f) = &filter {
            pairs.push(("$filter", f.render()));
        }
        if let Some(o) = orderby {
            pairs.push(("$orderby", o.to_string()));
        }
        let path = if rng.gen_bool(0.5) { "Datastreams(1)/Observations" } else { "Observations" };
        let full = ids(&svc.get(path, &encode(&[pairs.clone(), vec![("$top", MAX_TOP.to_string())]].concat())).unwrap());

        let expected: HashSet<u64> = source
            .observations
            .iter()
            .filter(|o| filter.as_ref().is_none_or(|f| f.eval(o)))
            .map(|o| o.id)
            .collect();
        let got: HashSet<u64> = full.iter().copied().collect();
        assert_eq!(got, expected, "seed {seed}: $filter={:?}", filter.as_ref().map(GenFilter::render));
        assert_eq!(got.len(), full.len(), "seed {seed}: duplicate rows");

        let pages = walk_pages(&svc, path, &encode(&[pairs, vec![("$top", top.to_string())]].concat()));
        assert!(pages.iter().all(|p| p.len() <= top), "seed {seed}: page over $top");
        let mut seen = HashSet::new();
        assert!(pages.iter().flatten().all(|id| seen.insert(*id)), "seed {seed}: pages overlap");
        assert_eq!(seen, got, "seed {seed}: union of pages");
        assert_eq!(pages.concat(), full, "seed {seed}: page order");
        if orderby.is_none() {
            let time: BTreeMap<u64, i64> = source.observations.iter().map(|o| (o.id, o.phenomenon_time)).collect();
            assert!(full.windows(2).all(|w| time[&w[0]] < time[&w[1]]), "seed {seed}: default order");
        }
        pages_walked += pages.len();
    }
    pages_walked
}

/// `Err` with a reason when the outcome is neither a query nor an error
/// that locates or names the offending option.
fn classify(raw: &str) -> Result<bool, String> {
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| parse_query(raw, EntityKind::Observation, MAX_TOP)))
        .map_err(|_| format!("panic on {raw:?}"))?;
    let decoded: Vec<(String, String)> = url::form_urlencoded::parse(raw.as_bytes()).into_owned().collect();
    let value_len = |option: &str| decoded.iter().find(|(k, _)| k == option).map(|(_, v)| v.chars().count());
    match outcome {
        Ok(_) => Ok(true),
        Err(e @ (QueryError::Parse { .. } | QueryError::UnknownProperty { .. })) => {
            let (QueryError::Parse { option, .. } | QueryError::UnknownProperty { option, .. }) = &e else {
                unreachable!()
            };
            let position = e.position().expect("positioned");
            match value_len(option) {
                Some(len) if position <= len => Ok(false),
                _ => Err(format!("{raw:?}: {e} outside the value of {option}")),
            }
        }
        Err(QueryError::InvalidValue { option, .. }) if value_len(&option).is_some() => Ok(false),
        Err(QueryError::UnsupportedOption(what)) if decoded.iter().any(|(k, _)| what.starts_with(k.as_str())) => {
            Ok(false)
        }
        Err(QueryError::UnknownNavigation(name)) if decoded.iter().any(|(_, v)| v.contains(&name)) => Ok(false),
        Err(e) => Err(format!("{raw:?}: unlocated error {e}")),
    }
}

fn fuzz() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let options = ["$filter", "$orderby", "$select", "$expand", "$top", "$skip", "$count", "flag_scheme"];
    let vocab = [
        "result", "phenomenonTime", "resultTime", "id", "eq", "ge", "and", "or", "not", "(", ")", "'", "'x'",
        "10", "-1.5e3", "1e400", "2024-05-01T00:00:00Z", "2024-13-01T00:00:00Z", "@iot.id", ",", "$", "&",
        "=", "%", "é", "\u{0}", " ", "desc", "Datastream",
    ];
    let (mut inputs, mut accepted) = (0, 0);
    let mut feed = |raw: String| {
        inputs += 1;
        accepted += classify(&raw).unwrap_or_else(|why| panic!("{why}")) as usize;
    };
    for _ in 0..FUZZ_INPUTS.div_ceil(3) {
        let bytes: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
        feed(String::from_utf8_lossy(&bytes).into_owned());
        let option = options[rng.gen_range(0..options.len())];
        feed(format!("{option}={}", bytes.iter().map(|b| format!("%{b:02X}")).collect::<String>()));
        let soup: Vec<&str> = (0..rng.gen_range(0..16)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
        feed(encode(&[(option, soup.join(" "))]));
    }
    drop(feed);
    (inputs, accepted)
}

pub fn run() -> String {
    let pages = query_data_pairs();
    let (inputs, accepted) = fuzz();
    format!(
        "{PAIRS} query/data pairs ({pages} pages) match the oracles; {inputs} fuzz inputs, {accepted} parsed, the rest positioned errors, no panics"
    )
}
