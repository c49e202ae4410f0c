#![allow(dead_code)]

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use fairstream_core::{Config, Platform, Principal, Role};
use serde_json::{json, Value};
use tempfile::TempDir;
use uuid::Uuid;

pub const ADMIN: &str = "cli-admin-token-000000001";
pub const SECOND: i64 = 1_000_000_000;
pub const MINUTE: i64 = 60 * SECOND;
/// 2024-05-01T00:00:00Z
pub const T0: i64 = 1_714_521_600 * SECOND;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fairstream")
}

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// A data directory plus a service config pointing at it.
pub struct Env {
    pub dir: TempDir,
    pub config: PathBuf,
    pub data: PathBuf,
    pub bind: String,
    pub base: String,
}

impl Env {
    pub fn new() -> Self {
        Self::with_store_section("")
    }

    /// `store` is the body of the `[store]` table.
    pub fn with_store_section(store: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let bind = format!("127.0.0.1:{}", free_port());
        let base = format!("http://{bind}");
        let config = dir.path().join("fairstream.toml");
        fs::write(
            &config,
            format!(
                "data_dir = {data:?}\nhttp_bind = {bind:?}\nbootstrap_admin_token = {ADMIN:?}\n\n[store]\n{store}\n",
                data = data.display().to_string(),
            ),
        )
        .unwrap();
        Env { dir, config, data, bind, base }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Runs the binary with this environment's config.
    pub fn cli(&self, args: &[&str]) -> Output {
        Command::new(bin())
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env_remove("FAIRSTREAM_CONFIG")
            .output()
            .unwrap()
    }

    /// Opens the platform in-process; the directory must not be served.
    pub fn open(&self) -> Platform {
        Platform::open(Config::load(&self.config).unwrap()).unwrap()
    }

    /// Creates a Thing in-process and returns its uuid, datastream ids and
    /// one-time ingest secret.
    pub fn create_thing(&self, spec: Value) -> (Uuid, Vec<u64>, Option<String>) {
        let platform = self.open();
        let owner = Principal {
            token_id: "bootstrap".into(),
            role: Role::Admin,
        };
        let created = platform.create_thing(serde_json::from_value(spec).unwrap(), &owner).unwrap();
        let uuid: Uuid = created.thing["uuid"].as_str().unwrap().parse().unwrap();
        let ds = platform.thing(uuid).unwrap().datastreams;
        platform.close().unwrap();
        (uuid, ds, created.credential.secret)
    }

    pub fn serve(&self) -> Server {
        let child = Command::new(bin())
            .arg("--config")
            .arg(&self.config)
            .arg("serve")
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut server = Server { child: Some(child), base: self.base.clone() };
        let deadline = Instant::now() + Duration::from_secs(30);
        while TcpStream::connect(&self.bind).is_err() {
            if let Some(status) = server.child.as_mut().unwrap().try_wait().unwrap() {
                panic!("server exited early with {status}: {}", server.stderr());
            }
            assert!(Instant::now() < deadline, "server did not start listening");
            thread::sleep(Duration::from_millis(20));
        }
        server
    }
}

pub struct Server {
    child: Option<Child>,
    pub base: String,
}

impl Server {
    /// SIGTERM and wait.
    pub fn stop(mut self) -> ExitStatus {
        let mut child = self.child.take().unwrap();
        signal(&child, "TERM");
        wait_with_timeout(&mut child, Duration::from_secs(60))
    }

    /// SIGKILL and wait.
    pub fn kill(mut self) {
        let mut child = self.child.take().unwrap();
        child.kill().unwrap();
        child.wait().unwrap();
    }

    fn stderr(&mut self) -> String {
        use std::io::Read;
        let mut s = String::new();
        if let Some(err) = self.child.as_mut().and_then(|c| c.stderr.as_mut()) {
            let _ = err.read_to_string(&mut s);
        }
        s
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

pub fn signal(child: &Child, name: &str) {
    let status = Command::new("kill").arg(format!("-{name}")).arg(child.id().to_string()).status().unwrap();
    assert!(status.success());
}

pub fn wait_with_timeout(child: &mut Child, limit: Duration) -> ExitStatus {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            return status;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            panic!("process did not exit within {limit:?}");
        }
        thread::sleep(Duration::from_millis(20));
    }
}

/// Blocking HTTP client for test scripts.
pub struct Http {
    pub rt: tokio::runtime::Runtime,
    pub client: reqwest::Client,
}

impl Http {
    pub fn new() -> Self {
        Http {
            rt: tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap(),
            client: reqwest::Client::new(),
        }
    }

    pub fn send(&self, method: reqwest::Method, url: &str, token: Option<&str>, body: Option<Vec<u8>>) -> (u16, Vec<u8>) {
        self.rt.block_on(async {
            let mut req = self.client.request(method, url);
            if let Some(t) = token {
                req = req.bearer_auth(t);
            }
            if let Some(b) = body {
                req = req.body(b);
            }
            let resp = req.send().await.unwrap();
            let status = resp.status().as_u16();
            (status, resp.bytes().await.unwrap().to_vec())
        })
    }

    pub fn get(&self, url: &str, token: Option<&str>) -> (u16, Vec<u8>) {
        self.send(reqwest::Method::GET, url, token, None)
    }

    pub fn get_json(&self, url: &str, token: Option<&str>) -> Value {
        let (status, body) = self.get(url, token);
        assert_eq!(status, 200, "GET {url}: {}", String::from_utf8_lossy(&body));
        serde_json::from_slice(&body).unwrap()
    }

    pub fn post_json(&self, url: &str, token: Option<&str>, body: &Value) -> (u16, Value) {
        let (status, bytes) =
            self.send(reqwest::Method::POST, url, token, Some(serde_json::to_vec(body).unwrap()));
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    /// Follows `@iot.nextLink` and concatenates every page's `value`.
    pub fn sta_all(&self, first: &str, token: Option<&str>) -> Vec<Value> {
        let mut out = Vec::new();
        let mut url = first.to_string();
        loop {
            let page = self.get_json(&url, token);
            out.extend(page["value"].as_array().unwrap().iter().cloned());
            match page.get("@iot.nextLink").and_then(Value::as_str) {
                Some(next) => url = next.to_string(),
                None => return out,
            }
        }
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

/// Thing with `temp`, `press` and `counts` fed from the logger CSV layout
/// of [`crns_csv`].
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

/// Thing reading the CSV export layout back in.
pub fn export_thing_spec() -> Value {
    json!({
        "name": "re-ingest",
        "transport": "http",
        "parser_profile": {
            "kind": "csv",
            "timestamp_column": "phenomenon_time",
            "timestamp_format": "rfc3339",
            "skip_header_lines": 1,
            "value_columns": [{"column": "result", "position": "value"}]
        },
        "datastreams": [{
            "position": "value",
            "name": "value",
            "unit": "1",
            "observed_property": {"name": "value", "definition": "urn:obs:value"}
        }]
    })
}

/// One logger row: time and the three quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub t: i64,
    pub temp: f64,
    pub press: f64,
    pub counts: f64,
}

/// Random-walk logger data with injected range violations, spikes and
/// stuck neutron counts.
pub fn crns_rows(rng: &mut impl rand::Rng, n: usize) -> Vec<Row> {
    let (mut temp, mut press, mut counts) = (12.0f64, 1005.0f64, 900.0f64);
    let mut stuck = 0;
    (0..n)
        .map(|i| {
            temp += rng.gen_range(-0.3..0.3);
            press += rng.gen_range(-0.8..0.8);
            if stuck > 0 {
                stuck -= 1;
            } else if rng.gen_bool(0.01) {
                stuck = rng.gen_range(3..12);
            } else {
                counts = (counts + rng.gen_range(-25.0..25.0f64)).round().max(0.0);
            }
            let shown_temp = match rng.gen_range(0..200) {
                0 => 99.0,
                1 => temp + 15.0,
                2 => -60.0,
                _ => temp,
            };
            Row {
                t: T0 + i as i64 * MINUTE,
                temp: (shown_temp * 100.0).round() / 100.0,
                press: (press * 10.0).round() / 10.0,
                counts,
            }
        })
        .collect()
}

pub fn crns_csv(rows: &[Row]) -> Vec<u8> {
    let mut out = String::from("timestamp,air_temperature,air_pressure,neutron_counts\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", rfc3339(r.t), r.temp, r.press, r.counts));
    }
    out.into_bytes()
}

pub fn rfc3339(ns: i64) -> String {
    fairstream_sta::format_time(ns)
}

pub fn parse_rfc3339(s: &str) -> i64 {
    fairstream_ingest::parse_timestamp(s, fairstream_ingest::TimestampFormat::Rfc3339).unwrap()
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

pub fn write(path: &Path, bytes: &[u8]) {
    fs::write(path, bytes).unwrap();
}
