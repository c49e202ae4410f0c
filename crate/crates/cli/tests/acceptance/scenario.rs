//! Register a CRNS device, create its Thing, replay a logger file with the
//! CLI, attach QC over HTTP and read everything back through STA.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::common::*;
use crate::oracles;

const ROWS: usize = 10_000;
const BUDGET: Duration = Duration::from_secs(60);

const QC: &str = "\
# CRNS station checks
temp ; flagRange(min=-40, max=60)
temp ; flagSpikeMAD(window=7, z=3.5)
counts ; flagConstants(window=5, tolerance=0)
";

fn expected_flags(rows: &[Row]) -> [Vec<bool>; 3] {
    let temp: Vec<f64> = rows.iter().map(|r| r.temp).collect();
    let counts: Vec<f64> = rows.iter().map(|r| r.counts).collect();
    let range = oracles::out_of_range(&temp, -40.0, 60.0);
    let spikes = oracles::on_unmasked(&temp, &range, |v| oracles::spikes(v, 7, 3.5));
    let temp_bad = range.iter().zip(&spikes).map(|(a, b)| *a || *b).collect();
    [temp_bad, vec![false; rows.len()], oracles::constants(&counts, 5, 0.0)]
}

pub fn run() -> String {
    let started = Instant::now();
    let env = Env::new();
    let http = Http::new();
    let rows = crns_rows(&mut ChaCha8Rng::seed_from_u64(0xC125), ROWS);

    // Register the device and set up the Thing.
    let server = env.serve();
    let (status, device) = http.post_json(&format!("{}/registry/v1/devices", env.base), Some(ADMIN), &crns_device());
    assert_eq!(status, 201, "register device: {device}");
    let attrs = &device["data"]["attributes"];
    let quantities: Vec<&str> =
        attrs["properties"].as_array().unwrap().iter().map(|q| q["name"].as_str().unwrap()).collect();
    assert_eq!(quantities, ["air temperature", "air pressure", "neutron counts"]);
    let device_id: u64 = device["data"]["id"].as_str().unwrap().parse().unwrap();

    let (status, created) = http.post_json(
        &format!("{}/platform/v1/things", env.base),
        Some(ADMIN),
        &crns_thing_spec("http", Some(device_id)),
    );
    assert_eq!(status, 201, "create thing: {created}");
    let uuid = created["thing"]["uuid"].as_str().unwrap().to_string();
    let ds: Vec<u64> = ["temp", "press", "counts"]
        .iter()
        .map(|pos| {
            created["thing"]["datastreams"]
                .as_array()
                .unwrap()
                .iter()
                .find(|d| d["position"] == *pos)
                .and_then(|d| d["id"].as_u64())
                .unwrap()
        })
        .collect();
    assert_eq!(server.stop().code(), Some(0));

    // Replay the logger file offline.
    let file = env.path("crns_logger.csv");
    write(&file, &crns_csv(&rows));
    let summary = stdout_json(&env.cli(&["ingest", "replay", "--thing", &uuid, "--file", file.to_str().unwrap()]));
    assert_eq!(summary, json!({"accepted": ROWS, "errors": []}));

    // Attach QC; the attachment catches up on the stored data.
    let server = env.serve();
    let (status, attached) = http.post_json(
        &format!("{}/platform/v1/things/{uuid}/qc-config", env.base),
        Some(ADMIN),
        &json!({ "config": QC }),
    );
    assert_eq!(status, 201, "attach: {attached}");
    assert!(attached["initial_run"].is_object(), "catch-up run reported: {attached}");

    // Read back through STA and compare with the oracle.
    let expected = expected_flags(&rows);
    let mut flagged = [0usize; 3];
    for (k, id) in ds.iter().enumerate() {
        let url = format!("{}/v1.1/Datastreams({id})/Observations?$top=700&$orderby=phenomenonTime%20asc", env.base);
        let observations = http.sta_all(&url, Some(ADMIN));
        assert_eq!(observations.len(), ROWS, "datastream {id}");
        let ids: HashSet<u64> = observations.iter().map(|o| o["@iot.id"].as_u64().unwrap()).collect();
        assert_eq!(ids.len(), ROWS, "pages are disjoint");
        for (i, (o, row)) in observations.iter().zip(&rows).enumerate() {
            let value = [row.temp, row.press, row.counts][k];
            assert_eq!(parse_rfc3339(o["phenomenonTime"].as_str().unwrap()), row.t, "row {i}");
            assert_eq!(o["result"].as_f64(), Some(value), "row {i}");
            let want = if expected[k][i] { "BAD" } else { "" };
            assert_eq!(o["parameters"]["flag"], want, "datastream {id} row {i} value {value}");
        }
        flagged[k] = expected[k].iter().filter(|f| **f).count();
    }
    let sensor = http.get_json(&format!("{}/v1.1/Datastreams({})/Sensor", env.base, ds[0]), Some(ADMIN));
    let metadata = sensor["metadata"].as_str().unwrap_or_default();
    assert!(metadata.ends_with(&format!("/registry/v1/devices/{device_id}/sensorml")), "{sensor}");
    let (status, _) = http.get(metadata, Some(ADMIN));
    assert_eq!(status, 200);
    assert_eq!(server.stop().code(), Some(0));

    let elapsed = started.elapsed();
    assert!(elapsed < BUDGET, "took {elapsed:?}");
    assert!(flagged[0] > 0 && flagged[2] > 0, "data exercises the tests: {flagged:?}");
    format!(
        "{ROWS} rows x 3 datastreams, exact flag match (BAD temp {}, counts {}), {:.1}s of {}s budget",
        flagged[0],
        flagged[2],
        elapsed.as_secs_f64(),
        BUDGET.as_secs()
    )
}
