//! Signal-processing respiratory rate estimator: band filtering, envelope,
//! resampling to a fixed working rate, respiratory band filter, then peak
//! picking per analysis window.

use crate::audio::{rates_equal, AudioSegment};
use crate::dsp::{
    apply_filter, detrend_linear, find_peaks, hilbert_envelope, moving_average, resample_linear, FilterSpec, MinHeight,
    PeakConstraints,
};
use crate::error::{Error, Result};
use crate::labels::{rate_entry, AnalysisWindow, Provenance, RateSeries};
use crate::postprocess::{Event, EventSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpConfig {
    /// Used at 2100 and 4410 Hz.
    pub band: (f64, f64),
    /// Used at 490 and 1050 Hz, where the upper band edge is above Nyquist.
    pub highpass: f64,
    pub filter_order: usize,
    /// Seconds.
    pub envelope_smooth: f64,
    pub work_rate: f64,
    pub resp_band: (f64, f64),
    /// Seconds.
    pub peak_min_distance: f64,
    pub peak_min_height_frac: f64,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig {
            band: (200.0, 800.0),
            highpass: 200.0,
            filter_order: 4,
            envelope_smooth: 0.1,
            work_rate: 1000.0,
            resp_band: (0.01, 3.0),
            peak_min_distance: 0.30,
            peak_min_height_frac: 0.02,
        }
    }
}

impl SpConfig {
    /// Sound-band filter for an input rate.
    pub fn input_filter(&self, rate: f64) -> Result<FilterSpec> {
        if [2100.0, 4410.0].iter().any(|&r| rates_equal(r, rate)) {
            Ok(FilterSpec::bandpass(self.band.0, self.band.1, self.filter_order))
        } else if [490.0, 1050.0].iter().any(|&r| rates_equal(r, rate)) {
            Ok(FilterSpec::highpass(self.highpass, self.filter_order))
        } else {
            Err(Error::UnsupportedRate(rate))
        }
    }

    pub fn resp_filter(&self) -> FilterSpec {
        FilterSpec::bandpass(self.resp_band.0, self.resp_band.1, self.filter_order)
    }
}

/// Respiratory waveform at the working rate, with the filter that was chosen
/// for the input rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RespSignal {
    pub samples: Vec<f64>,
    pub rate: f64,
    pub input_filter: FilterSpec,
}

impl RespSignal {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

/// Whole-segment stages: mean removal, sound-band filter, envelope magnitude,
/// smoothing, resampling to the working rate and the respiratory band filter.
pub fn sp_respiratory_signal(seg: &AudioSegment, cfg: &SpConfig) -> Result<RespSignal> {
    if seg.num_channels() != 1 {
        return Err(Error::arg(
            "segment",
            format!("expected one channel, got {}", seg.num_channels()),
        ));
    }
    respiratory_signal(seg.channel(0), seg.sample_rate(), cfg)
}

/// As [`sp_respiratory_signal`] on a raw channel.
pub fn respiratory_signal(x: &[f64], rate: f64, cfg: &SpConfig) -> Result<RespSignal> {
    let input_filter = cfg.input_filter(rate)?;
    if x.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let band = apply_filter(&centered, rate, &input_filter)?;
    let env = hilbert_envelope(&band)?;
    let env = moving_average(&env, cfg.envelope_smooth, rate)?;
    let work = resample_linear(&env, rate, cfg.work_rate)?;
    let samples = apply_filter(&work, cfg.work_rate, &cfg.resp_filter())?;
    Ok(RespSignal {
        samples,
        rate: cfg.work_rate,
        input_filter,
    })
}

/// Peaks of the detrended waveform inside one window, as times in seconds.
pub fn window_events(resp: &RespSignal, window: &AnalysisWindow, cfg: &SpConfig) -> Result<Vec<f64>> {
    let n = resp.samples.len();
    let a = ((window.start * resp.rate).round() as usize).min(n);
    let b = ((window.end() * resp.rate).round() as usize).min(n);
    if b - a < 3 {
        return Ok(Vec::new());
    }
    let x = detrend_linear(&resp.samples[a..b])?;
    let c = PeakConstraints::new(
        cfg.peak_min_distance,
        MinHeight::FractionOfMax(cfg.peak_min_height_frac),
    )?;
    Ok(find_peaks(&x, resp.rate, &c)
        .into_iter()
        .map(|p| (a + p) as f64 / resp.rate)
        .collect())
}

/// Detected events per window.
pub fn sp_events(resp: &RespSignal, windows: &[AnalysisWindow], cfg: &SpConfig) -> Result<Vec<EventSeries>> {
    windows
        .iter()
        .map(|w| {
            Ok(EventSeries {
                events: window_events(resp, w, cfg)?
                    .into_iter()
                    .map(|time| Event { time, confidence: None })
                    .collect(),
                window: *w,
                provenance: Provenance::Sp,
            })
        })
        .collect()
}

pub fn sp_rates(resp: &RespSignal, windows: &[AnalysisWindow], cfg: &SpConfig) -> Result<RateSeries> {
    let entries = windows
        .iter()
        .map(|w| Ok(rate_entry(*w, &window_events(resp, w, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateSeries {
        entries,
        source: Provenance::Sp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::windows;
    use rustfft::{num_complex::Complex64, FftPlanner};
    use std::f64::consts::PI;

    fn resp_from(samples: Vec<f64>) -> RespSignal {
        RespSignal {
            samples,
            rate: 1000.0,
            input_filter: FilterSpec::highpass(200.0, 4),
        }
    }

    fn dominant_frequency(x: &[f64], rate: f64) -> f64 {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let k = (1..buf.len() / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        k as f64 * rate / x.len() as f64
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn am_tone(depth: f64, secs: f64) -> Vec<f64> {
        let rate = 4410.0;
        (0..(secs * rate) as usize)
            .map(|i| {
                let t = i as f64 / rate;
                0.5 * (1.0 + depth * (2.0 * PI * 1.5 * t).sin()) * (2.0 * PI * 440.0 * t).sin()
            })
            .collect()
    }

    #[test]
    fn filter_choice_follows_rate() {
        let c = SpConfig::default();
        assert_eq!(c.input_filter(4410.0).unwrap(), FilterSpec::bandpass(200.0, 800.0, 4));
        assert_eq!(c.input_filter(2100.0).unwrap(), FilterSpec::bandpass(200.0, 800.0, 4));
        assert_eq!(c.input_filter(1050.0).unwrap(), FilterSpec::highpass(200.0, 4));
        assert_eq!(c.input_filter(490.0).unwrap(), FilterSpec::highpass(200.0, 4));
        assert!(matches!(c.input_filter(8000.0), Err(Error::UnsupportedRate(_))));
        assert!(c.input_filter(44100.0).is_err());
    }

    #[test]
    fn modulated_tone_yields_modulation_frequency() {
        let cfg = SpConfig::default();
        let modulated = respiratory_signal(&am_tone(0.8, 20.0), 4410.0, &cfg).unwrap();
        assert!((modulated.duration() - 20.0).abs() <= 1e-3);
        // skip the first and last seconds where the 0.01 Hz edge settles
        let mid = &modulated.samples[2000..18_000];
        let f = dominant_frequency(mid, 1000.0);
        assert!((f - 1.5).abs() <= 0.1, "{f}");

        let plain = respiratory_signal(&am_tone(0.0, 20.0), 4410.0, &cfg).unwrap();
        assert!(rms(&plain.samples[2000..18_000]) < 0.05 * rms(mid));
    }

    #[test]
    fn silence_and_argument_errors() {
        let cfg = SpConfig::default();
        let r = respiratory_signal(&vec![0.0; 4410 * 2], 4410.0, &cfg).unwrap();
        assert!(r.samples.iter().all(|v| v.abs() < 1e-15));
        let stereo = AudioSegment::new(
            vec![vec![0.0; 4410], vec![0.0; 4410]],
            4410.0,
            crate::audio::SegmentMeta::new("h", "trot"),
        )
        .unwrap();
        assert!(sp_respiratory_signal(&stereo, &cfg).is_err());
        assert!(respiratory_signal(&[0.0; 100], 8000.0, &cfg).is_err());
    }

    #[test]
    fn homogeneous_of_degree_one() {
        let cfg = SpConfig::default();
        let x = am_tone(0.6, 12.0);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = respiratory_signal(&x, 4410.0, &cfg).unwrap();
        let b = respiratory_signal(&x2, 4410.0, &cfg).unwrap();
        let scale = a.samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (u, v) in a.samples.iter().zip(&b.samples) {
            assert!((2.0 * u - v).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn sinusoid_gives_120_bpm() {
        let cfg = SpConfig::default();
        let r = resp_from(
            (0..60_000)
                .map(|i| (2.0 * PI * 2.0 * i as f64 / 1000.0).sin())
                .collect(),
        );
        let win = windows(60.0, 10.0, 5.0).unwrap();
        let s = sp_rates(&r, &win, &cfg).unwrap();
        for e in &s.entries {
            assert!((e.rr.unwrap() - 120.0).abs() < 1e-6, "{e:?}");
        }
    }

    #[test]
    fn chirp_is_tracked() {
        // instantaneous frequency 1 + 1.5 t / 60 Hz
        let cfg = SpConfig::default();
        let r = resp_from(
            (0..60_000)
                .map(|i| {
                    let t = i as f64 / 1000.0;
                    (2.0 * PI * (t + 0.75 * t * t / 60.0)).sin()
                })
                .collect(),
        );
        let win = windows(60.0, 10.0, 5.0).unwrap();
        let s = sp_rates(&r, &win, &cfg).unwrap();
        let mut prev = 0.0;
        for e in &s.entries {
            let mid = e.window.start + 5.0;
            let want = 60.0 * (1.0 + 1.5 * mid / 60.0);
            let got = e.rr.unwrap();
            assert!((got - want).abs() <= 5.0, "{mid}: {got} vs {want}");
            assert!(got > prev);
            prev = got;
        }
    }

    #[test]
    fn rates_ignore_waveform_scale_and_bound_peak_count() {
        let cfg = SpConfig::default();
        let x: Vec<f64> = (0..30_000)
            .map(|i| {
                let t = i as f64 / 1000.0;
                (2.0 * PI * 1.7 * t).sin() + 0.3 * (2.0 * PI * 5.3 * t).sin()
            })
            .collect();
        let win = windows(30.0, 10.0, 5.0).unwrap();
        let a = sp_rates(&resp_from(x.clone()), &win, &cfg).unwrap();
        let b = sp_rates(&resp_from(x.iter().map(|v| v * 37.5).collect()), &win, &cfg).unwrap();
        assert_eq!(a.entries, b.entries);
        for w in &win {
            let ev = window_events(&resp_from(x.clone()), w, &cfg).unwrap();
            assert!(ev.len() <= (10.0f64 / 0.30).floor() as usize + 1);
        }
    }
}
