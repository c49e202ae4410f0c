//! Each randomized payload is delivered twice, over HTTP to a running
//! server and through the MQTT handler of an in-process platform. The
//! second delivery must leave counts and query results untouched.

use std::sync::Arc;

use fairstream_core::{Platform, PlatformSource};
use fairstream_ingest::mqtt::topic_for;
use fairstream_ingest::MqttBatcher;
use fairstream_sta::StaService;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::common::*;

const PAYLOADS: u64 = 100;
const HEADER: &str = "timestamp,air_temperature,air_pressure,neutron_counts\n";

/// Rows at random minutes of a shared window so payloads overlap, with
/// occasional exact duplicate rows and malformed fields.
fn payload(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut minutes: Vec<i64> = (0..3000).collect();
    minutes.shuffle(rng);
    let mut lines: Vec<String> = minutes[..rng.gen_range(1..80)]
        .iter()
        .map(|m| {
            let field = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| match rng.gen_range(0..40) {
                0 => String::new(),
                1 => "n/a".into(),
                _ => ((rng.gen_range(lo..hi) * 100.0f64).round() / 100.0).to_string(),
            };
            let (temp, press) = (field(rng, -30.0, 40.0), field(rng, 950.0, 1050.0));
            let counts = field(rng, 0.0, 2000.0);
            format!("{},{temp},{press},{counts}", rfc3339(T0 + m * MINUTE))
        })
        .collect();
    for _ in 0..rng.gen_range(0..3) {
        let copy = lines[rng.gen_range(0..lines.len())].clone();
        lines.push(copy);
    }
    lines.shuffle(rng);
    format!("{HEADER}{}\n", lines.join("\n")).into_bytes()
}

fn datastream_ids(created: &Value) -> Vec<u64> {
    created["thing"]["datastreams"].as_array().unwrap().iter().map(|d| d["id"].as_u64().unwrap()).collect()
}

/// Every observation of every datastream as served by STA, plus counts.
type Snapshot = Vec<(usize, Vec<Value>)>;

fn http_snapshot(http: &Http, base: &str, ds: &[u64]) -> Snapshot {
    ds.iter()
        .map(|id| {
            let url = format!("{base}/v1.1/Datastreams({id})/Observations?$top=1000&$orderby=phenomenonTime%20asc");
            let all = http.sta_all(&url, Some(ADMIN));
            (all.len(), all)
        })
        .collect()
}

fn platform_snapshot(platform: &Platform, ds: &[u64]) -> Snapshot {
    let source = PlatformSource::all(platform);
    let base = platform.base_url();
    let service = StaService::new(&source, base);
    ds.iter()
        .map(|id| {
            let mut rows = Vec::new();
            let (mut path, mut query) =
                (format!("Datastreams({id})/Observations"), "$top=1000&$orderby=phenomenonTime%20asc".to_string());
            loop {
                let page = service.get(&path, &query).unwrap();
                rows.extend(page["value"].as_array().unwrap().iter().cloned());
                let Some(next) = page.get("@iot.nextLink").and_then(Value::as_str) else { break };
                let (p, q) = next.split_once('?').unwrap();
                path = p.strip_prefix(&format!("{base}/v1.1/")).unwrap().to_string();
                query = q.to_string();
            }
            (platform.store().point_count(*id).unwrap(), rows)
        })
        .collect()
}

fn over_http() -> (usize, usize) {
    let env = Env::new();
    let http = Http::new();
    let server = env.serve();
    let (status, created) =
        http.post_json(&format!("{}/platform/v1/things", env.base), Some(ADMIN), &crns_thing_spec("http", None));
    assert_eq!(status, 201, "{created}");
    let uuid = created["thing"]["uuid"].as_str().unwrap();
    let secret = created["credential"]["secret"].as_str().unwrap();
    let ds = datastream_ids(&created);
    let url = format!("{}/ingest/v1/things/{uuid}/observations", env.base);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D_0001);
    let mut row_errors = 0;
    for k in 0..PAYLOADS {
        let body = payload(&mut rng);
        let (status, first) = http.send(reqwest::Method::POST, &url, Some(secret), Some(body.clone()));
        assert_eq!(status, 200, "payload {k}: {}", String::from_utf8_lossy(&first));
        let before = http_snapshot(&http, &env.base, &ds);
        let (status, second) = http.send(reqwest::Method::POST, &url, Some(secret), Some(body));
        assert_eq!(status, 200);
        assert_eq!(first, second, "payload {k}: push summaries differ");
        let after = http_snapshot(&http, &env.base, &ds);
        assert!(before == after, "payload {k}: second HTTP delivery changed the data");
        row_errors += serde_json::from_slice::<Value>(&first).unwrap()["errors"].as_array().unwrap().len();
    }
    let points = http_snapshot(&http, &env.base, &ds).iter().map(|s| s.0).sum();
    assert_eq!(server.stop().code(), Some(0));
    (points, row_errors)
}

fn over_mqtt() -> usize {
    let env = Env::new();
    let (uuid, ds, _) = env.create_thing(crns_thing_spec("mqtt", None));
    let platform = Arc::new(env.open());
    let handler = MqttBatcher::new(platform.clone());
    let topic = topic_for(uuid);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D_0002);
    for k in 0..PAYLOADS {
        let body = payload(&mut rng);
        let first = handler.handle(&topic, &body).unwrap();
        let before = platform_snapshot(&platform, &ds);
        let second = handler.handle(&topic, &body).unwrap();
        assert_eq!(first, second, "payload {k}: summaries differ");
        let after = platform_snapshot(&platform, &ds);
        assert!(before == after, "payload {k}: second MQTT delivery changed the data");
    }
    let points = platform_snapshot(&platform, &ds).iter().map(|s| s.0).sum();
    drop(handler);
    Arc::try_unwrap(platform).ok().expect("sole owner").close().unwrap();
    points
}

pub fn run() -> String {
    let (http_points, row_errors) = over_http();
    let mqtt_points = over_mqtt();
    format!(
        "{PAYLOADS} payloads delivered twice over HTTP ({http_points} points, {row_errors} row errors) and MQTT ({mqtt_points} points): counts and STA results unchanged"
    )
}
