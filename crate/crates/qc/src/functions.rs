//! The catalog algorithms as pure functions over plain slices.
//!
//! Flagging functions take the evaluated (unmasked) values in time order and
//! return the indices to flag, ascending.

use std::collections::VecDeque;

use crate::catalog::Aggregation;
use crate::expr::Expr;

/// Scale factor making the MAD a consistent estimator of the standard
/// deviation under normality.
pub const MAD_SCALE: f64 = 1.4826;

pub fn flag_range(values: &[f64], min: f64, max: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < min || **v > max)
        .map(|(i, _)| i)
        .collect()
}

/// Hampel-style spike test over centered windows of odd length `window`.
pub fn flag_spike_mad(values: &[f64], window: usize, z: f64) -> Vec<usize> {
    assert!(window % 2 == 1 && window >= 3, "window must be odd and >= 3");
    let n = values.len();
    if n < window {
        return Vec::new();
    }
    let half = window / 2;
    let mid = window / 2;
    let threshold_scale = z * MAD_SCALE;

    // Sorted copy of the current window, updated incrementally.
    let mut sorted: Vec<f64> = values[..window].to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut deviations = vec![0.0; window];
    let mut flagged = Vec::new();

    for center in half..n - half {
        if center > half {
            let leaving = values[center - half - 1];
            let at = sorted.partition_point(|v| v.total_cmp(&leaving).is_lt());
            sorted.remove(at);
            let entering = values[center + half];
            let at = sorted.partition_point(|v| v.total_cmp(&entering).is_lt());
            sorted.insert(at, entering);
        }
        let median = sorted[mid];
        for (d, v) in deviations.iter_mut().zip(&sorted) {
            *d = (v - median).abs();
        }
        let (_, mad, _) = deviations.select_nth_unstable_by(mid, f64::total_cmp);
        let x = values[center];
        if (x - median).abs() > threshold_scale * *mad {
            flagged.push(center);
        }
    }
    flagged
}

/// Flags every point belonging to a stretch of at least `window`
/// consecutive points whose spread (max - min) stays within `tolerance`.
pub fn flag_constants(values: &[f64], window: usize, tolerance: f64) -> Vec<usize> {
    assert!(window >= 2, "window must be >= 2");
    // For each right end r, `left` is the smallest start such that
    // values[left..=r] fits the tolerance. It never moves backwards.
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut left = 0;
    let mut marked = vec![false; values.len()];
    let mut marked_from = 0;
    for (r, &v) in values.iter().enumerate() {
        while maxq.back().is_some_and(|&i| values[i] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(r);
        while minq.back().is_some_and(|&i| values[i] >= v) {
            minq.pop_back();
        }
        minq.push_back(r);
        while values[maxq[0]] - values[minq[0]] > tolerance {
            left += 1;
            while maxq[0] < left {
                maxq.pop_front();
            }
            while minq[0] < left {
                minq.pop_front();
            }
        }
        if r + 1 - left >= window {
            for m in marked.iter_mut().take(r + 1).skip(left.max(marked_from)) {
                *m = true;
            }
            marked_from = r + 1;
        }
    }
    marked
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i)
        .collect()
}

/// Evaluates `expr` at each target point. `resolve(var, i)` yields the value
/// of a variable at the target's i-th timestamp, or `None` if absent.
pub fn flag_generic(
    expr: &Expr,
    len: usize,
    mut resolve: impl FnMut(usize, usize) -> Option<f64>,
) -> Vec<usize> {
    let mut bound = vec![None; expr.variables().len()];
    (0..len)
        .filter(|&i| {
            for (slot, b) in bound.iter_mut().enumerate() {
                *b = resolve(slot, i);
            }
            expr.eval(&bound)
        })
        .collect()
}

/// Aggregates into bins `[t0 + k*freq, t0 + (k+1)*freq)` with `t0` the
/// first timestamp floored to a multiple of `freq`. Empty bins produce no
/// output.
pub fn resample(
    timestamps: &[i64],
    values: &[f64],
    freq: i64,
    aggregation: Aggregation,
) -> Vec<(i64, f64)> {
    assert!(freq > 0);
    assert_eq!(timestamps.len(), values.len());
    let mut out = Vec::new();
    let mut i = 0;
    while i < timestamps.len() {
        let bin = timestamps[i].div_euclid(freq);
        let mut j = i;
        while j < timestamps.len() && timestamps[j].div_euclid(freq) == bin {
            j += 1;
        }
        let slice = &values[i..j];
        let v = match aggregation {
            Aggregation::Mean => compensated_sum(slice) / slice.len() as f64,
            Aggregation::Min => slice.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Max => slice.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Count => slice.len() as f64,
        };
        out.push((bin * freq, v));
        i = j;
    }
    out
}

/// Neumaier summation.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if f64::abs(sum) >= f64::abs(v) {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Linear interpolation of NaN values between the nearest finite neighbours
/// when those neighbours are at most `maxgap` apart. Returns `(index, value)`.
pub fn interpolate(timestamps: &[i64], values: &[f64], maxgap: i64) -> Vec<(usize, f64)> {
    assert_eq!(timestamps.len(), values.len());
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    let mut i = 0;
    while i < values.len() {
        if !values[i].is_nan() {
            prev = Some(i);
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < values.len() && values[i].is_nan() {
            i += 1;
        }
        let (Some(a), Some(b)) = (prev, (i < values.len()).then_some(i)) else {
            continue;
        };
        let (ta, tb) = (timestamps[a], timestamps[b]);
        let span = tb - ta;
        if span > maxgap {
            continue;
        }
        let (va, vb) = (values[a], values[b]);
        for (k, &t) in timestamps.iter().enumerate().take(b).skip(gap_start) {
            let wa = (tb - t) as f64;
            let wb = (t - ta) as f64;
            out.push((k, (va * wa + vb * wb) / span as f64));
        }
    }
    out
}
