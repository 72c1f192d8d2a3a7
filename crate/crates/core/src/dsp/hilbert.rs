use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Magnitude of the analytic signal, computed with a full-length DFT.
///
/// The spectrum is kept at DC (and Nyquist for even lengths), doubled on
/// positive frequencies and zeroed on negative ones before inversion.
pub fn hilbert_envelope(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Length { needed: 0, got: 0 });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);

    let half = n / 2;
    // the Nyquist bin of an even-length transform is neither doubled nor zeroed
    for v in &mut buf[1..n.div_ceil(2)] {
        *v *= 2.0;
    }
    for v in &mut buf[half + 1..] {
        *v = Complex64::new(0.0, 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.norm() * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pure_tone_envelope_is_its_amplitude() {
        let rate = 4410.0;
        let (amp, f) = (0.6, 400.0);
        let n = 4410;
        let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / rate).sin()).collect();
        let env = hilbert_envelope(&x).unwrap();
        let edge = (rate / f).ceil() as usize;
        for (e, v) in env[edge..n - edge].iter().zip(&x[edge..n - edge]) {
            assert!((e - amp).abs() <= 0.01 * amp);
            assert!(*e >= v.abs() - 1e-6);
        }
    }

    #[test]
    fn zeros_give_zeros() {
        assert!(hilbert_envelope(&[0.0; 17]).unwrap().iter().all(|&v| v == 0.0));
        assert!(hilbert_envelope(&[]).is_err());
    }

    #[test]
    fn am_tone_is_demodulated() {
        let rate = 4410.0;
        let (f, g) = (500.0, 2.0);
        let n = 4 * 4410;
        let modulation = |t: f64| 1.0 + 0.5 * (2.0 * PI * g * t).sin();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                modulation(t) * (2.0 * PI * f * t).sin()
            })
            .collect();
        let env = hilbert_envelope(&x).unwrap();
        let edge = 441;
        for (i, e) in env.iter().enumerate().take(n - edge).skip(edge) {
            let want = modulation(i as f64 / rate);
            assert!((e - want).abs() <= 0.02 * want, "{i}: {e} vs {want}");
        }
    }

    #[test]
    fn odd_lengths() {
        let x: Vec<f64> = (0..1001).map(|i| (i as f64 * 0.7).cos()).collect();
        let env = hilbert_envelope(&x).unwrap();
        assert_eq!(env.len(), 1001);
        assert!(env[400..600].iter().all(|&e| (e - 1.0).abs() < 0.01));
    }
}
