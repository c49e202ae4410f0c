//! Random column stacks against a newest-first scan, live and after reopen.

use fairstream_qc::UNFLAGGED;
use fairstream_store::{FlagMeta, NewPoint, RangeQuery, Store, StoreConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATASTREAMS: u64 = 100;
const TRIALS_PER_DATASTREAM: i64 = 100;
const MAX_COLUMNS: usize = 20;
const MAX_TIMESTAMPS: usize = 100;
/// Trials of one datastream live in disjoint timestamp blocks.
const BLOCK: i64 = 1_000;

type Column = Vec<(i64, f32)>;

struct Trial {
    datastream: u64,
    timestamps: Vec<i64>,
    columns: Vec<Column>,
}

fn random_flag(rng: &mut ChaCha8Rng) -> f32 {
    match rng.gen_range(0..5) {
        0 => UNFLAGGED,
        1 => 0.0,
        2 => 25.0,
        3 => 255.0,
        _ => rng.gen_range(0.0..=255.0f32),
    }
}

fn trial(rng: &mut ChaCha8Rng, datastream: u64, block: i64) -> Trial {
    let n = rng.gen_range(1..=MAX_TIMESTAMPS);
    let base = block * BLOCK;
    let mut timestamps: Vec<i64> = (0..BLOCK).map(|k| base + k).collect::<Vec<_>>();
    timestamps.shuffle(rng);
    timestamps.truncate(n);
    timestamps.sort_unstable();
    let columns = (0..rng.gen_range(0..=MAX_COLUMNS))
        .map(|_| {
            let coverage = rng.gen_range(0.0..=1.0);
            let mut column = Column::new();
            for &t in &timestamps {
                if rng.gen_bool(coverage) {
                    column.push((t, random_flag(rng)));
                }
            }
            column
        })
        .collect();
    Trial { datastream, timestamps, columns }
}

/// Newest column holding `t` wins; otherwise UNFLAGGED.
fn scan_newest(columns: &[Column], t: i64) -> f32 {
    columns
        .iter()
        .rev()
        .find_map(|c| c.iter().find(|e| e.0 == t).map(|e| e.1))
        .unwrap_or(UNFLAGGED)
}

fn meta(k: usize) -> FlagMeta {
    FlagMeta {
        function: "flagGeneric".into(),
        params: format!("expr='column {k}'"),
        config_hash: format!("{k:064x}"),
        engine_version: "acceptance".into(),
        run_at: "2024-05-01T00:00:00Z".into(),
    }
}

fn check(store: &Store, trials: &[Trial]) -> usize {
    let mut compared = 0;
    for tr in trials {
        let (lo, hi) = (tr.timestamps[0], tr.timestamps[tr.timestamps.len() - 1] + 1);
        let rows = store.query_range(tr.datastream, RangeQuery::new(lo, hi).with_flags()).unwrap();
        assert_eq!(rows.len(), tr.timestamps.len());
        for (row, &t) in rows.iter().zip(&tr.timestamps) {
            let want = scan_newest(&tr.columns, t);
            let got = store.current_flag(tr.datastream, t).unwrap();
            assert_eq!(got.to_bits(), want.to_bits(), "datastream {} t {t}: {got} vs {want}", tr.datastream);
            assert_eq!(row.flag.map(f32::to_bits), Some(want.to_bits()), "query flag at {t}");
            compared += 1;
        }
    }
    compared
}

pub fn run() -> String {
    let dir = tempfile::tempdir().unwrap();
    let config = StoreConfig { sync: false, ..StoreConfig::default() };
    let store = Store::open(dir.path(), config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1A6);
    let mut trials = Vec::new();
    let mut written = 0usize;
    for ds in 1..=DATASTREAMS {
        store.create_datastream(ds).unwrap();
        let writer = store.writer(ds).unwrap();
        let mut column_count = 0;
        for block in 0..TRIALS_PER_DATASTREAM {
            let tr = trial(&mut rng, ds, block);
            let points: Vec<NewPoint> = tr
                .timestamps
                .iter()
                .map(|&t| NewPoint { phenomenon_time: t, result: t as f64, result_time: 0 })
                .collect();
            writer.append(&points).unwrap();
            for (k, column) in tr.columns.iter().enumerate() {
                writer.write_flag_column(meta(k), column).unwrap();
            }
            column_count += tr.columns.len();
            written += tr.columns.len();
            trials.push(tr);
        }
        assert_eq!(store.flag_columns(ds).unwrap().len(), column_count);
    }
    let live = check(&store, &trials);
    store.close().unwrap();

    let reopened = Store::open(dir.path(), config).unwrap();
    let recovered = check(&reopened, &trials);
    assert_eq!(live, recovered);
    reopened.close().unwrap();
    format!(
        "{} trials, {written} columns, {live} timestamps match the newest-first scan live and after reopen",
        trials.len()
    )
}
