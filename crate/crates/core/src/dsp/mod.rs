//! Numerical primitives shared by the detectors: filtering, envelopes,
//! moving statistics, detrending, resampling and peak picking.

mod filter;
mod hilbert;
mod moving;
mod peaks;

pub use filter::{apply_filter, Biquad, FilterKind, FilterSpec, Sos};
pub use hilbert::hilbert_envelope;
pub use moving::{moving_average, moving_average_samples, moving_variance, window_samples};
pub use peaks::{far_enough, find_peaks, MinHeight, PeakConstraints};

use crate::error::{Error, Result};

/// Removes the least-squares straight line (fitted against the sample index).
pub fn detrend_linear(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Length { needed: 1, got: n });
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - x_mean - slope * (i as f64 - t_mean))
        .collect())
}

/// Linear interpolation onto a uniform grid at `rate_out` spanning the same
/// duration (`len / rate_in`). Grid points past the last input sample are
/// extrapolated from the final segment.
pub fn resample_linear(x: &[f64], rate_in: f64, rate_out: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Length { needed: 0, got: 0 });
    }
    if !(rate_in > 0.0 && rate_out > 0.0) {
        return Err(Error::arg("rate", "rates must be positive"));
    }
    if rate_in == rate_out {
        return Ok(x.to_vec());
    }
    let n_out = ((x.len() as f64 / rate_in) * rate_out).round() as usize;
    if x.len() == 1 {
        return Ok(vec![x[0]; n_out.max(1)]);
    }
    let last = x.len() - 1;
    let ratio = rate_in / rate_out;
    Ok((0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(last - 1);
            let frac = pos - i as f64;
            x[i] + (x[i + 1] - x[i]) * frac
        })
        .collect())
}
