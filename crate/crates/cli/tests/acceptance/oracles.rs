//! Brute-force reference implementations of the flagging tests. Each
//! returns one bool per input value: flagged or not.

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

pub fn out_of_range(values: &[f64], min: f64, max: f64) -> Vec<bool> {
    values.iter().map(|&v| v < min || v > max).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Centered odd window; points without a full window are never flagged.
pub fn spikes(values: &[f64], window: usize, z: f64) -> Vec<bool> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            if i < half || i + half >= values.len() {
                return false;
            }
            let w = &values[i - half..=i + half];
            let med = median(w.to_vec());
            let mad = median(w.iter().map(|v| (v - med).abs()).collect());
            (values[i] - med).abs() > z * MAD_SCALE * mad
        })
        .collect()
}

/// Every point inside some stretch of at least `window` consecutive
/// values whose spread is within `tolerance`.
pub fn constants(values: &[f64], window: usize, tolerance: f64) -> Vec<bool> {
    let n = values.len();
    let mut marked = vec![false; n];
    for i in 0..n {
        for j in (i + window - 1)..n {
            let s = &values[i..=j];
            let hi = s.iter().copied().fold(f64::MIN, f64::max);
            let lo = s.iter().copied().fold(f64::MAX, f64::min);
            if hi - lo <= tolerance {
                marked[i..=j].iter_mut().for_each(|m| *m = true);
            } else {
                break;
            }
        }
    }
    marked
}

/// `oracle` applied to the unmasked points only, scattered back to full
/// length; masked points stay unflagged.
pub fn on_unmasked(values: &[f64], masked: &[bool], oracle: impl Fn(&[f64]) -> Vec<bool>) -> Vec<bool> {
    let kept: Vec<usize> = (0..values.len()).filter(|&i| !masked[i]).collect();
    let kept_values: Vec<f64> = kept.iter().map(|&i| values[i]).collect();
    let mut out = vec![false; values.len()];
    for (k, flagged) in oracle(&kept_values).into_iter().enumerate() {
        out[kept[k]] = flagged;
    }
    out
}
