#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use fairstream_core::{Config, Platform};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

pub const ADMIN: &str = "admin-token-for-tests-0001";
pub const T0: i64 = 1_714_521_600_000_000_000; // 2024-05-01T00:00:00Z
pub const MINUTE: i64 = 60_000_000_000;

pub struct Harness {
    pub dir: TempDir,
    pub platform: Arc<Platform>,
    pub app: Router,
}

pub fn config(dir: &std::path::Path) -> Config {
    let mut config = Config::for_data_dir(dir, ADMIN);
    config.base_url = Some("http://fairstream.test".into());
    config.ingest.dropdir = Some(dir.join("drop"));
    config
}

impl Harness {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let platform = Arc::new(Platform::open(config(dir.path())).unwrap());
        let app = fairstream_core::http::router(platform.clone());
        Harness { dir, platform, app }
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn json(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self
            .call(method, uri, token, body.map(|b| serde_json::to_vec(&b).unwrap()))
            .await;
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    /// Creates the CRNS Thing over HTTP and returns the creation response.
    pub async fn create_crns_thing(&self, transport: &str) -> Value {
        let (status, body) = self
            .json(Method::POST, "/platform/v1/things", Some(ADMIN), Some(crns_thing_spec(transport, None)))
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body
    }
}

pub fn crns_device() -> Value {
    json!({
        "short_name": "CRNS probe 7",
        "manufacturer": "Hydroinnova",
        "model": "CRS-2000/B",
        "serial_number": "HI-4711",
        "device_type": "CRNS",
        "description": "Cosmic-ray neutron sensor",
        "properties": [
            {"name": "air temperature", "unit": "Cel", "position_index": 0},
            {"name": "air pressure", "unit": "hPa", "position_index": 1},
            {"name": "neutron counts", "unit": "{counts}/h", "position_index": 2}
        ],
        "contacts": [
            {"given_name": "Ada", "family_name": "Lovelace", "email": "ada@example.org", "role": "owner"}
        ]
    })
}

pub fn crns_thing_spec(transport: &str, device_id: Option<u64>) -> Value {
    let ds = |pos: &str, name: &str, unit: &str| {
        json!({
            "position": pos,
            "name": name,
            "unit": unit,
            "device_id": device_id,
            "observed_property": {"name": name, "definition": format!("urn:obs:{pos}")}
        })
    };
    json!({
        "name": "CRNS station Alpha",
        "description": "Soil moisture site",
        "transport": transport,
        "parser_profile": {
            "kind": "csv",
            "timestamp_column": "timestamp",
            "timestamp_format": "rfc3339",
            "skip_header_lines": 1,
            "value_columns": [
                {"column": "air_temperature", "position": "temp"},
                {"column": "air_pressure", "position": "press"},
                {"column": "neutron_counts", "position": "counts"}
            ]
        },
        "datastreams": [
            ds("temp", "air temperature", "Cel"),
            ds("press", "air pressure", "hPa"),
            ds("counts", "neutron counts", "{counts}/h")
        ]
    })
}

pub fn rfc3339(ns: i64) -> String {
    fairstream_sta::format_time(ns)
}

/// CSV payload in the CRNS layout; `rows` are (t, temp, press, counts).
pub fn crns_csv(rows: &[(i64, f64, f64, f64)]) -> Vec<u8> {
    let mut out = String::from("timestamp,air_temperature,air_pressure,neutron_counts\n");
    for (t, a, b, c) in rows {
        out.push_str(&format!("{},{a},{b},{c}\n", rfc3339(*t)));
    }
    out.into_bytes()
}
