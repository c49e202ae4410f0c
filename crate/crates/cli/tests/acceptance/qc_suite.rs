//! Every flagging function through the pipeline against brute force on
//! seeded random series; resampling and interpolation against exact
//! bin and linear oracles.

use std::collections::BTreeMap;

use fairstream_qc::functions;
use fairstream_qc::{run_pipeline, Aggregation, QcConfig, RunContext, Series, Workspace, BAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles;

const SERIES: u64 = 1000;
const REL_TOL: f64 = 1e-12;
const STEP: i64 = 60_000_000_000;

/// Quantized random walk with plateaus and outliers.
fn walk(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(0..120);
    let mut level = rng.gen_range(-20.0..20.0f64).round();
    (0..n)
        .map(|_| match rng.gen_range(0..12) {
            0 => level + rng.gen_range(-150.0..150.0f64).round(),
            1..=4 => level,
            _ => {
                level += (rng.gen_range(-3.0..3.0f64) * 4.0).round() / 4.0;
                level
            }
        })
        .collect()
}

fn times(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| 1_700_000_000_000_000_000 + i * STEP).collect()
}

/// BAD timestamps written by the single entry of `config` on `x`.
fn flagged(config: &str, ws: &mut Workspace) -> Vec<i64> {
    let config = QcConfig::parse(config).unwrap_or_else(|e| panic!("{config}: {e}"));
    let out = run_pipeline(&config, ws, &RunContext::new("2024-01-01T00:00:00Z")).unwrap();
    let column = out.entries[0].column.as_ref().expect("flagging writes a column");
    assert!(column.entries.iter().all(|e| e.1 == BAD));
    column.entries.iter().map(|e| e.0).collect()
}

fn pick(ts: &[i64], marks: &[bool]) -> Vec<i64> {
    ts.iter().zip(marks).filter(|(_, m)| **m).map(|(t, _)| *t).collect()
}

fn single(values: &[f64]) -> (Vec<i64>, Workspace) {
    let ts = times(values.len());
    let mut ws = Workspace::new();
    ws.insert("x".into(), Series::new(ts.clone(), values.to_vec()));
    (ts, ws)
}

fn range_suite() {
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA000 + k);
        let v = walk(&mut rng);
        let (a, b) = (rng.gen_range(-30.0..30.0f64).round(), rng.gen_range(-30.0..30.0f64).round());
        let (min, max) = (a.min(b), a.max(b));
        let (ts, mut ws) = single(&v);
        let got = flagged(&format!("x ; flagRange(min={min}, max={max})"), &mut ws);
        assert_eq!(got, pick(&ts, &oracles::out_of_range(&v, min, max)), "flagRange seed {k}");
    }
}

fn spike_suite() {
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB000 + k);
        let v = walk(&mut rng);
        let window = 2 * rng.gen_range(1..7) + 1;
        let z = [1.5, 2.0, 3.0, 3.5, 5.0][rng.gen_range(0..5)];
        let (ts, mut ws) = single(&v);
        let got = flagged(&format!("x ; flagSpikeMAD(window={window}, z={z})"), &mut ws);
        assert_eq!(got, pick(&ts, &oracles::spikes(&v, window, z)), "flagSpikeMAD seed {k} window {window} z {z}");
    }
}

fn constants_suite() {
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC000 + k);
        let v = walk(&mut rng);
        let window = rng.gen_range(2..8);
        let tolerance = [0.0, 0.25, 0.5, 1.0, 3.0][rng.gen_range(0..5)];
        let (ts, mut ws) = single(&v);
        let got = flagged(&format!("x ; flagConstants(window={window}, tolerance={tolerance})"), &mut ws);
        assert_eq!(
            got,
            pick(&ts, &oracles::constants(&v, window, tolerance)),
            "flagConstants seed {k} window {window} tolerance {tolerance}"
        );
    }
}

fn generic_suite() {
    type Oracle = fn(f64, f64) -> bool;
    // An expression naming a variable without a value at the point is false.
    let cases: [(&str, bool, Oracle); 5] = [
        ("x > 10 or x < -10", false, |x, _| x > 10.0 || x < -10.0),
        ("x >= p", true, |x, p| x >= p),
        ("not (x < p + 2) and x != 0", true, |x, p| !(x < p + 2.0) && x != 0.0),
        ("x * 2 - p == 4", true, |x, p| x * 2.0 - p == 4.0),
        ("(x < 0 and p > 5) or x == 7", true, |x, p| (x < 0.0 && p > 5.0) || x == 7.0),
    ];
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD000 + k);
        let (expr, uses_p, oracle) = cases[k as usize % cases.len()];
        let x = walk(&mut rng);
        let ts = times(x.len());
        let mut companion = BTreeMap::new();
        for &t in &ts {
            if rng.gen_bool(0.75) {
                companion.insert(t, rng.gen_range(-10..20) as f64);
            }
        }
        let mut ws = Workspace::new();
        ws.insert("x".into(), Series::new(ts.clone(), x.clone()));
        ws.insert(
            "p".into(),
            Series::new(companion.keys().copied().collect(), companion.values().copied().collect()),
        );
        let got = flagged(&format!("x ; flagGeneric(expr='{expr}')"), &mut ws);
        let want: Vec<bool> = ts
            .iter()
            .zip(&x)
            .map(|(t, v)| match companion.get(t) {
                Some(p) => oracle(*v, *p),
                None => !uses_p && oracle(*v, f64::NAN),
            })
            .collect();
        assert_eq!(got, pick(&ts, &want), "flagGeneric seed {k}: {expr}");
    }
}

fn close(got: f64, exact: f64) -> bool {
    got == exact || (got - exact).abs() <= REL_TOL * exact.abs()
}

/// Sum in 2^-40 fixed point on i128, exact for the generated values.
fn exact_mean(values: &[f64]) -> f64 {
    let scale = (1u64 << 40) as f64;
    let sum: i128 = values.iter().map(|v| (v * scale).round() as i128).sum();
    sum as f64 / scale / values.len() as f64
}

fn resample_suite() -> usize {
    let mut bins_checked = 0;
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xE000 + k);
        let n = rng.gen_range(1..150);
        let mut t = rng.gen_range(-5_000_000i64..5_000_000);
        let mut ts = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            t += rng.gen_range(1..4_000);
            ts.push(t);
            // Multiples of 2^-20 so the fixed-point oracle sum is exact.
            vs.push(rng.gen_range(-1i64 << 40..1i64 << 40) as f64 / (1u64 << 20) as f64);
        }
        let freq = rng.gen_range(1..25_000);
        let aggregation = [Aggregation::Mean, Aggregation::Min, Aggregation::Max, Aggregation::Count][rng.gen_range(0..4)];
        let got = functions::resample(&ts, &vs, freq, aggregation);

        // Bins of width freq aligned to multiples of freq.
        let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for (&t, &v) in ts.iter().zip(&vs) {
            bins.entry(t.div_euclid(freq) * freq).or_default().push(v);
        }
        assert_eq!(got.len(), bins.len(), "resample seed {k}");
        for ((bin_t, value), (want_t, members)) in got.iter().zip(&bins) {
            assert_eq!(bin_t, want_t, "resample seed {k}");
            let exact = match aggregation {
                Aggregation::Mean => exact_mean(members),
                Aggregation::Min => members.iter().copied().fold(f64::INFINITY, f64::min),
                Aggregation::Max => members.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Count => members.len() as f64,
            };
            assert!(close(*value, exact), "resample seed {k}: {value} vs {exact}");
        }
        bins_checked += bins.len();
    }
    bins_checked
}

fn interpolate_suite() -> usize {
    let mut filled = 0;
    for k in 0..SERIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF000 + k);
        let n = rng.gen_range(0..80);
        let mut t = 0i64;
        let mut ts = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            t += rng.gen_range(1..90) * 1_000_000_000;
            ts.push(t);
            vs.push(if rng.gen_bool(0.35) { f64::NAN } else { rng.gen_range(-5000..5000) as f64 });
        }
        let maxgap = rng.gen_range(1..500) * 1_000_000_000;
        let got = functions::interpolate(&ts, &vs, maxgap);

        let mut want = Vec::new();
        for i in (0..n).filter(|&i| vs[i].is_nan()) {
            let before = (0..i).rev().find(|&j| !vs[j].is_nan());
            let after = (i + 1..n).find(|&j| !vs[j].is_nan());
            if let (Some(a), Some(b)) = (before, after) {
                if ts[b] - ts[a] <= maxgap {
                    // Exact rational value of the line through a and b at t_i.
                    let den = (ts[b] - ts[a]) as i128;
                    let num = vs[a] as i128 * den + (vs[b] - vs[a]) as i128 * (ts[i] - ts[a]) as i128;
                    want.push((i, num as f64 / den as f64));
                }
            }
        }
        assert_eq!(got.len(), want.len(), "interpolate seed {k}");
        for ((gi, gv), (wi, wv)) in got.iter().zip(&want) {
            assert_eq!(gi, wi, "interpolate seed {k}");
            assert!(close(*gv, *wv), "interpolate seed {k}: {gv} vs {wv}");
        }
        filled += want.len();
    }
    filled
}

pub fn run() -> String {
    range_suite();
    spike_suite();
    constants_suite();
    generic_suite();
    let bins = resample_suite();
    let filled = interpolate_suite();
    format!(
        "4 flagging functions x {SERIES} series exact; resample {SERIES} series ({bins} bins) and interpolate {SERIES} series ({filled} gaps) within {REL_TOL:e} relative"
    )
}
