//! Centered moving statistics with windows that shrink at the edges.
//!
//! A window of `w` samples around index `i` covers `[i - w/2, i + (w-1)/2]`
//! (for even `w` one more sample precedes the centre than follows it).

use crate::error::{Error, Result};

/// Window length in samples for a duration in seconds.
pub fn window_samples(window: f64, rate: f64) -> Result<usize> {
    if !(window > 0.0) || !(rate > 0.0) {
        return Err(Error::arg("window", format!("{window} s at {rate} Hz")));
    }
    Ok(((window * rate).round() as usize).max(1))
}

fn bounds(i: usize, n: usize, w: usize) -> (usize, usize) {
    let before = w / 2;
    let after = (w - 1) / 2;
    (i.saturating_sub(before), (i + after + 1).min(n))
}

// Running sums are recomputed from scratch at this interval to bound drift.
const REFRESH: usize = 512;

/// Running (count, shifted sum, shifted sum of squares) over the sliding window.
fn sliding<F: FnMut(usize, f64, f64, f64)>(x: &[f64], w: usize, mut emit: F) {
    let n = x.len();
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut shift = 0.0;
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for i in 0..n {
        let (a, b) = bounds(i, n, w);
        if i % REFRESH == 0 {
            let win = &x[a..b];
            shift = win.iter().sum::<f64>() / win.len() as f64;
            s1 = 0.0;
            s2 = 0.0;
            for &v in win {
                let d = v - shift;
                s1 += d;
                s2 += d * d;
            }
        } else {
            while hi < b {
                let d = x[hi] - shift;
                s1 += d;
                s2 += d * d;
                hi += 1;
            }
            while lo < a {
                let d = x[lo] - shift;
                s1 -= d;
                s2 -= d * d;
                lo += 1;
            }
        }
        lo = a;
        hi = b;
        emit(b - a, shift, s1, s2);
    }
}

fn moving_mean_samples(x: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    sliding(x, w, |count, shift, s1, _| out.push(shift + s1 / count as f64));
    out
}

/// Centered moving average over `window` seconds.
pub fn moving_average(x: &[f64], window: f64, rate: f64) -> Result<Vec<f64>> {
    let w = window_samples(window, rate)?;
    Ok(moving_mean_samples(x, w))
}

/// Centered moving unbiased variance over `window` seconds. A window that has
/// shrunk to one sample at an edge yields 0.
pub fn moving_variance(x: &[f64], window: f64, rate: f64) -> Result<Vec<f64>> {
    let w = window_samples(window, rate)?;
    if w < 2 {
        return Err(Error::arg("window", "variance needs at least 2 samples"));
    }
    let mut out = Vec::with_capacity(x.len());
    sliding(x, w, |count, _, s1, s2| {
        if count < 2 {
            out.push(0.0);
        } else {
            let c = count as f64;
            out.push(((s2 - s1 * s1 / c) / (c - 1.0)).max(0.0));
        }
    });
    Ok(out)
}

/// Box filter with an explicit sample count (used where the width is already
/// known in samples).
pub fn moving_average_samples(x: &[f64], w: usize) -> Vec<f64> {
    moving_mean_samples(x, w.max(1))
}
