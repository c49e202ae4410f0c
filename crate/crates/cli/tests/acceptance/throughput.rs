//! A million observations pushed over HTTP to the release binary, then a
//! SIGKILL and recovery that must keep every acknowledged point.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use fairstream_store::verify_data_dir;
use serde_json::Value;

use crate::common::*;

const POINTS: usize = 1_000_000;
const VALUES_PER_ROW: usize = 3;
const ROWS_PER_REQUEST: usize = 5_000;
const CLIENTS: usize = 4;
const REQUIRED_RATE: f64 = 50_000.0;

fn chunks() -> Vec<Vec<u8>> {
    let rows = POINTS.div_ceil(VALUES_PER_ROW);
    (0..rows)
        .step_by(ROWS_PER_REQUEST)
        .map(|start| {
            let mut body = String::from("timestamp,air_temperature,air_pressure,neutron_counts\n");
            for i in start..rows.min(start + ROWS_PER_REQUEST) {
                let t = rfc3339(T0 + i as i64 * SECOND);
                body.push_str(&format!("{t},{:.2},{:.1},{}\n", (i % 4000) as f64 / 100.0, 1000.0 + (i % 97) as f64, i % 1500));
            }
            body.into_bytes()
        })
        .collect()
}

pub fn run() -> String {
    let env = Env::new();
    let http = Http::new();
    let server = env.serve();
    let (status, created) =
        http.post_json(&format!("{}/platform/v1/things", env.base), Some(ADMIN), &crns_thing_spec("http", None));
    assert_eq!(status, 201, "{created}");
    let uuid = created["thing"]["uuid"].as_str().unwrap().to_string();
    let secret = created["credential"]["secret"].as_str().unwrap().to_string();
    let ds: Vec<u64> =
        created["thing"]["datastreams"].as_array().unwrap().iter().map(|d| d["id"].as_u64().unwrap()).collect();
    let bodies = Arc::new(chunks());
    let url = Arc::new(format!("{}/ingest/v1/things/{uuid}/observations", env.base));

    let started = Instant::now();
    let accepted_rows = http.rt.block_on(async {
        let next = Arc::new(AtomicUsize::new(0));
        let workers: Vec<_> = (0..CLIENTS)
            .map(|_| {
                let (client, bodies, url, next, secret) =
                    (http.client.clone(), bodies.clone(), url.clone(), next.clone(), secret.clone());
                tokio::spawn(async move {
                    let mut accepted = 0u64;
                    loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        let Some(body) = bodies.get(k) else { return accepted };
                        let resp = client.post(url.as_str()).bearer_auth(&secret).body(body.clone()).send().await.unwrap();
                        assert_eq!(resp.status().as_u16(), 200, "chunk {k}");
                        let summary: Value = resp.json().await.unwrap();
                        assert_eq!(summary["errors"], Value::Array(vec![]), "chunk {k}");
                        accepted += summary["accepted"].as_u64().unwrap();
                    }
                })
            })
            .collect();
        let mut total = 0;
        for w in workers {
            total += w.await.unwrap();
        }
        total
    });
    let elapsed = started.elapsed().as_secs_f64();
    let points = accepted_rows as usize * VALUES_PER_ROW;
    let rate = points as f64 / elapsed;

    // Every push was acknowledged; a hard kill must not lose any of it.
    server.kill();
    let platform = env.open();
    let recovered = verify_data_dir(&env.data).unwrap();
    assert!(recovered.is_clean(), "after recovery: {:?}", recovered.problems);
    let stored: usize = ds.iter().map(|id| platform.store().point_count(*id).unwrap()).sum();
    platform.close().unwrap();
    let verified = stdout_json(&env.cli(&["store", "verify"]));
    assert_eq!(verified["problems"], Value::Array(vec![]));
    assert_eq!(stored, points, "points after SIGKILL recovery");
    assert!(points >= POINTS, "{points} points pushed");

    let detail = format!("{points} points in {elapsed:.1}s = {rate:.0} obs/s with {CLIENTS} clients; all recovered after SIGKILL, verify clean");
    assert!(rate >= REQUIRED_RATE, "{detail}; below the {REQUIRED_RATE:.0} obs/s target");
    detail
}
