//! Crash injection: a child process appends acknowledged batches until it
//! is SIGKILLed; the parent recovers the store and checks that nothing
//! acknowledged is missing. Then the on-disk segment format against the
//! committed golden files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::Duration;

use fairstream_store::{segment, verify_data_dir, NewPoint, RangeQuery, Store, StoreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::bin;

const CHILD_ENV: &str = "FAIRSTREAM_ACCEPTANCE_CRASH_CHILD";
const TRIALS: u64 = 100;
const DATASTREAM: u64 = 1;
/// Batch `k` owns timestamps `[k * SPAN, (k + 1) * SPAN)`.
const SPAN: i64 = 1_000;

fn child_config(compaction_points: usize) -> StoreConfig {
    StoreConfig {
        sync: true,
        compaction_wal_bytes: u64::MAX,
        compaction_points,
        background_compaction: false,
    }
}

/// Batch `k` of trial `seed`, identical in parent and child.
fn batch(seed: u64, k: i64) -> Vec<NewPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003) ^ k as u64);
    let n = rng.gen_range(1..60);
    let mut offsets: Vec<i64> = (0..SPAN).collect();
    (0..n)
        .map(|_| {
            let t = k * SPAN + offsets.swap_remove(rng.gen_range(0..offsets.len()));
            NewPoint { phenomenon_time: t, result: rng.gen_range(-1e6..1e6), result_time: t + 1 }
        })
        .collect()
}

/// Entry point when this binary runs as the crash victim: appends batches
/// forever, printing `ACK k` after batch `k` is durable.
pub fn crash_child() -> Option<ExitCode> {
    let spec = std::env::var(CHILD_ENV).ok()?;
    let mut parts = spec.split(',');
    let dir = PathBuf::from(parts.next()?);
    let seed: u64 = parts.next()?.parse().ok()?;
    let compaction_points: usize = parts.next()?.parse().ok()?;
    let store = Store::open(&dir, child_config(compaction_points)).expect("child opens store");
    if !store.has_datastream(DATASTREAM) {
        store.create_datastream(DATASTREAM).unwrap();
    }
    let writer = store.writer(DATASTREAM).unwrap();
    let mut out = std::io::stdout().lock();
    for k in 0.. {
        writer.append(&batch(seed, k)).unwrap();
        writeln!(out, "ACK {k}").unwrap();
        out.flush().unwrap();
    }
    unreachable!()
}

struct TrialOutcome {
    acked_points: usize,
    in_flight_points: usize,
}

fn trial(seed: u64, root: &Path) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = root.join(format!("trial-{seed}"));
    // A third of the trials compact inline so crashes also land mid-compaction.
    let compaction_points = if seed % 3 == 0 { rng.gen_range(50..400) } else { usize::MAX };
    let kill_after = rng.gen_range(0..40);
    let mut child = Command::new(std::env::current_exe().unwrap())
        .env(CHILD_ENV, format!("{},{seed},{compaction_points}", dir.display()))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut last_ack: Option<i64> = None;
    while last_ack.is_none_or(|k| k < kill_after) {
        let line = lines.next().expect("child alive").unwrap();
        last_ack = Some(line.strip_prefix("ACK ").unwrap().parse().unwrap());
    }
    std::thread::sleep(Duration::from_micros(rng.gen_range(0..3000)));
    child.kill().unwrap();
    child.wait().unwrap();
    // Acks printed between the last read and the kill still count.
    for line in lines {
        last_ack = Some(line.unwrap().strip_prefix("ACK ").unwrap().parse().unwrap());
    }
    let last_ack = last_ack.unwrap();

    let store = Store::open(&dir, StoreConfig { background_compaction: false, ..StoreConfig::default() }).unwrap();
    let recovered = verify_data_dir(&dir).unwrap();
    assert!(recovered.is_clean(), "trial {seed} after recovery: {:?}", recovered.problems);
    let stored = store.query_range(DATASTREAM, RangeQuery::all()).unwrap();
    let mut expected: Vec<NewPoint> = (0..=last_ack).flat_map(|k| batch(seed, k)).collect();
    let acked_points = expected.len();
    // The batch in flight at the kill may or may not have landed, in full or in part.
    let in_flight = batch(seed, last_ack + 1);
    expected.extend(stored.iter().filter_map(|o| {
        in_flight.iter().find(|p| p.phenomenon_time == o.phenomenon_time).copied()
    }));
    expected.sort_by_key(|p| p.phenomenon_time);
    let got: Vec<(i64, u64, i64)> =
        stored.iter().map(|o| (o.phenomenon_time, o.result.to_bits(), o.result_time)).collect();
    let want: Vec<(i64, u64, i64)> =
        expected.iter().map(|p| (p.phenomenon_time, p.result.to_bits(), p.result_time)).collect();
    assert_eq!(got.len(), want.len(), "trial {seed}: {} stored, {} expected", got.len(), want.len());
    assert!(got == want, "trial {seed}: recovered points differ from the acknowledged batches");
    store.close().unwrap();

    let report = verify_data_dir(&dir).unwrap();
    assert!(report.is_clean(), "trial {seed}: {:?}", report.problems);
    let cli = Command::new(bin()).args(["store", "verify", "--data"]).arg(&dir).output().unwrap();
    assert!(cli.status.success(), "trial {seed}: store verify: {}", String::from_utf8_lossy(&cli.stderr));
    TrialOutcome { acked_points, in_flight_points: want.len() - acked_points }
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../store/tests/golden")
}

fn segment_files(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(segment_files(&path));
        } else if path.extension().is_some_and(|e| e == "fsg") {
            found.push(path);
        }
    }
    found
}

/// The store writes the golden bytes for the golden inputs.
fn golden_segments() -> usize {
    let t0 = 1_714_521_600_000_000_000i64;
    let cases: [(&str, u64, Vec<i64>, Vec<f64>); 2] = [
        ("crns_3pt.fsg", 42, vec![t0, t0 + 60_000_000_000, t0 + 120_000_000_000], vec![21.5, -3.25, 0.001]),
        ("negative_ts.fsg", 7, vec![-5_000_000_000, -1, 0, 9], vec![1.0, f64::INFINITY, -0.0, 1e300]),
    ];
    for (name, ds, ts, vs) in &cases {
        let golden = fs::read(golden_dir().join(name)).unwrap();
        assert_eq!(segment::encode(*ds, ts, vs), golden, "{name}: encoder");

        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreConfig::default()).unwrap();
        store.create_datastream(*ds).unwrap();
        let points: Vec<NewPoint> = ts
            .iter()
            .zip(vs)
            .rev()
            .map(|(&t, &v)| NewPoint { phenomenon_time: t, result: v, result_time: t })
            .collect();
        store.writer(*ds).unwrap().append(&points).unwrap();
        store.close().unwrap();
        let files = segment_files(dir.path());
        assert_eq!(files.len(), 1, "{name}: {files:?}");
        assert_eq!(files[0].file_name().unwrap().to_str().unwrap(), segment::file_name(ts[0], ts[ts.len() - 1]));
        assert!(fs::read(&files[0]).unwrap() == golden, "{name}: store-written segment differs from golden");
    }
    cases.len()
}

pub fn run() -> String {
    let root = tempfile::tempdir().unwrap();
    let (mut acked, mut in_flight) = (0, 0);
    for seed in 0..TRIALS {
        let outcome = trial(seed, root.path());
        acked += outcome.acked_points;
        in_flight += outcome.in_flight_points;
    }
    let golden = golden_segments();
    format!(
        "{TRIALS} SIGKILL trials: all {acked} acknowledged points recovered ({in_flight} from in-flight batches), verify clean each time; {golden} golden segments bit-exact"
    )
}
