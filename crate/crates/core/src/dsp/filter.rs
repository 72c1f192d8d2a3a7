//! Butterworth IIR filters realised as cascaded second-order sections.
//!
//! Low- and high-pass designs use the bilinear transform with frequency
//! prewarping. A band-pass is the cascade of a high-pass at the lower cutoff
//! and a low-pass at the upper cutoff, each of the requested order.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Lowpass(f64),
    Highpass(f64),
    Bandpass(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub zero_phase: bool,
}

impl FilterSpec {
    pub fn lowpass(cutoff: f64, order: usize) -> Self {
        FilterSpec {
            kind: FilterKind::Lowpass(cutoff),
            order,
            zero_phase: true,
        }
    }

    pub fn highpass(cutoff: f64, order: usize) -> Self {
        FilterSpec {
            kind: FilterKind::Highpass(cutoff),
            order,
            zero_phase: true,
        }
    }

    pub fn bandpass(low: f64, high: f64, order: usize) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass(low, high),
            order,
            zero_phase: true,
        }
    }

    pub fn cutoffs(&self) -> Vec<f64> {
        match self.kind {
            FilterKind::Lowpass(c) | FilterKind::Highpass(c) => vec![c],
            FilterKind::Bandpass(lo, hi) => vec![lo, hi],
        }
    }

    fn validate(&self, rate: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::arg("order", "must be positive"));
        }
        let nyquist = rate / 2.0;
        for c in self.cutoffs() {
            if !(c > 0.0 && c < nyquist) {
                return Err(Error::arg(
                    "cutoffs",
                    format!("{c} Hz outside (0, {nyquist}) at rate {rate} Hz"),
                ));
            }
        }
        if let FilterKind::Bandpass(lo, hi) = self.kind {
            if lo >= hi {
                return Err(Error::arg("cutoffs", format!("band [{lo}, {hi}] not increasing")));
            }
        }
        Ok(())
    }

    /// Designs the cascade for a given sample rate.
    pub fn design(&self, rate: f64) -> Result<Sos> {
        self.validate(rate)?;
        let mut sections = Vec::new();
        match self.kind {
            FilterKind::Lowpass(c) => butterworth(&mut sections, c, rate, self.order, false),
            FilterKind::Highpass(c) => butterworth(&mut sections, c, rate, self.order, true),
            FilterKind::Bandpass(lo, hi) => {
                butterworth(&mut sections, lo, rate, self.order, true);
                butterworth(&mut sections, hi, rate, self.order, false);
            }
        }
        Ok(Sos { sections })
    }
}

/// One biquad, `a0` normalised to 1: `[b0, b1, b2, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Steady-state transposed-direct-form-II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        [gain - b0, b2 - a2 * gain]
    }

    fn dc_gain(&self) -> f64 {
        (self.b.iter().sum::<f64>()) / (1.0 + self.a[0] + self.a[1])
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex response of a single forward pass at `freq` Hz.
    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / rate);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Filters in place. `initial` scales the per-section steady-state
    /// conditions (the value the input is assumed to have held before t = 0).
    fn run(&self, x: &mut [f64], initial: f64) {
        let mut level = initial;
        for s in &self.sections {
            let zi = s.step_state();
            let mut z1 = zi[0] * level;
            let mut z2 = zi[1] * level;
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
            level *= s.dc_gain();
        }
    }
}

fn butterworth(out: &mut Vec<Biquad>, cutoff: f64, rate: f64, order: usize, high: bool) {
    let k = (PI * cutoff / rate).tan();
    let k2 = k * k;
    for m in 0..order / 2 {
        // conjugate pole pair of the analog prototype: s^2 + 2 zeta s + 1
        let theta = PI * (2 * m + 1) as f64 / (2 * order) as f64;
        let two_zeta = 2.0 * theta.sin();
        let a0 = 1.0 + two_zeta * k + k2;
        let a1 = (2.0 * k2 - 2.0) / a0;
        let a2 = (1.0 - two_zeta * k + k2) / a0;
        let b = if high {
            [1.0 / a0, -2.0 / a0, 1.0 / a0]
        } else {
            [k2 / a0, 2.0 * k2 / a0, k2 / a0]
        };
        out.push(Biquad { b, a: [a1, a2] });
    }
    if order % 2 == 1 {
        let a0 = 1.0 + k;
        let a1 = (k - 1.0) / a0;
        let b = if high {
            [1.0 / a0, -1.0 / a0, 0.0]
        } else {
            [k / a0, k / a0, 0.0]
        };
        out.push(Biquad { b, a: [a1, 0.0] });
    }
}

/// Applies `spec` to `x` sampled at `rate`.
///
/// Zero-phase mode runs the cascade forward, then over the reversed result,
/// on a copy padded at both ends by an odd reflection of `3 * order` samples.
/// Each pass starts every section in the steady state for a constant input
/// equal to the mean of the leading `rate / lowest_cutoff` samples of that
/// pass (the whole pass when shorter).
pub fn apply_filter(x: &[f64], rate: f64, spec: &FilterSpec) -> Result<Vec<f64>> {
    let sos = spec.design(rate)?;
    let pad = 3 * spec.order;
    if x.len() <= pad {
        return Err(Error::Length {
            needed: pad,
            got: x.len(),
        });
    }
    let lowest = spec.cutoffs().into_iter().fold(f64::INFINITY, f64::min);
    let lead = (rate / lowest).ceil() as usize;
    let initial = |v: &[f64]| {
        let head = &v[..lead.clamp(1, v.len())];
        head.iter().sum::<f64>() / head.len() as f64
    };
    if !spec.zero_phase {
        let mut y = x.to_vec();
        let level = initial(&y);
        sos.run(&mut y, level);
        return Ok(y);
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0], x[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    let level = initial(&ext);
    sos.run(&mut ext, level);
    ext.reverse();
    let level = initial(&ext);
    sos.run(&mut ext, level);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}
