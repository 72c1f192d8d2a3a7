//! Turns per-sample detector output into validated exhalation onsets and
//! windowed respiratory rates.

use std::fmt::Write as _;

use crate::dsp::{
    detrend_linear, find_peaks, hilbert_envelope, moving_average, moving_variance, window_samples, MinHeight,
    PeakConstraints,
};
use crate::error::{Error, Result};
use crate::labels::{rate_entry, runs, AnalysisWindow, Provenance, RateSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    /// Seconds.
    pub smooth_window: f64,
    pub smooth_threshold: f64,
    /// Seconds.
    pub variance_window: f64,
    pub variance_threshold: f64,
    /// Seconds.
    pub envelope_smooth: f64,
    /// Seconds; both the envelope peak spacing and the final event spacing.
    pub min_spacing: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            smooth_window: 0.1,
            smooth_threshold: 0.1,
            variance_window: 0.1,
            variance_threshold: 0.8,
            envelope_smooth: 0.1,
            min_spacing: 0.30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Seconds from the start of the segment.
    pub time: f64,
    pub confidence: Option<f64>,
}

/// Validated events whose onsets fall in one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSeries {
    pub events: Vec<Event>,
    pub window: AnalysisWindow,
    pub provenance: Provenance,
}

impl EventSeries {
    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// Checks ascending times and the minimum spacing.
    pub fn validate(&self, min_spacing: f64) -> Result<()> {
        for w in self.events.windows(2) {
            if !(w[1].time - w[0].time >= min_spacing - 1e-12) {
                return Err(Error::Validation(format!(
                    "events at {} and {} closer than {min_spacing} s",
                    w[0].time, w[1].time
                )));
            }
        }
        Ok(())
    }
}

/// CSV rows `time_s,window_index,provenance` for a list of windows.
pub fn events_to_csv(series: &[EventSeries]) -> String {
    let mut out = String::from("time_s,window_index,provenance\n");
    for s in series {
        for e in &s.events {
            let _ = writeln!(out, "{:.6},{},{}", e.time, s.window.index, s.provenance);
        }
    }
    out
}

fn check_binary(mask: &[u8]) -> Result<()> {
    match mask.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::arg("mask", format!("value {v} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Centered moving average of a binary mask over `window` seconds compared
/// against `threshold`; counts are kept as integers so the comparison is exact.
fn smooth_mask(y: &[u8], rate: f64, window: f64, threshold: f64) -> Result<Vec<u8>> {
    check_binary(y)?;
    let w = window_samples(window, rate)?;
    let n = y.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &v in y {
        prefix.push(prefix.last().unwrap() + v as usize);
    }
    let (before, after) = (w / 2, (w - 1) / 2);
    Ok((0..n)
        .map(|i| {
            let a = i.saturating_sub(before);
            let b = (i + after + 1).min(n);
            let ones = (prefix[b] - prefix[a]) as f64;
            u8::from(ones >= threshold * (b - a) as f64)
        })
        .collect())
}

/// Moving average over 0.1 s followed by the `>= 0.1` threshold.
pub fn smooth_and_threshold(y: &[u8], rate: f64) -> Result<Vec<u8>> {
    let c = PostprocessConfig::default();
    smooth_mask(y, rate, c.smooth_window, c.smooth_threshold)
}

/// Moving variance of `|signal|`, the statistic the gate thresholds.
pub fn gate_statistic(signal: &[f64], rate: f64, window: f64) -> Result<Vec<f64>> {
    let abs: Vec<f64> = signal.iter().map(|v| v.abs()).collect();
    moving_variance(&abs, window, rate)
}

/// Zeroes every run of ones whose maximum moving variance of `|signal|`
/// stays below `threshold`.
pub fn variance_gate(mask: &[u8], signal: &[f64], rate: f64, window: f64, threshold: f64) -> Result<Vec<u8>> {
    if mask.len() != signal.len() {
        return Err(Error::Shape(format!(
            "mask has {} samples, signal {}",
            mask.len(),
            signal.len()
        )));
    }
    check_binary(mask)?;
    let stat = gate_statistic(signal, rate, window)?;
    let mut out = mask.to_vec();
    for (a, b) in runs(mask) {
        let peak = stat[a..b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak < threshold {
            out[a..b].iter_mut().for_each(|v| *v = 0);
        }
    }
    Ok(out)
}

/// Per-run maxima of the gate statistic over the runs of a reference mask.
pub fn run_variance_maxima(mask: &[u8], signal: &[f64], rate: f64, window: f64) -> Result<Vec<f64>> {
    if mask.len() != signal.len() {
        return Err(Error::Shape(format!(
            "mask has {} samples, signal {}",
            mask.len(),
            signal.len()
        )));
    }
    let stat = gate_statistic(signal, rate, window)?;
    Ok(runs(mask)
        .into_iter()
        .map(|(a, b)| stat[a..b].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Gate threshold from labelled exhalations: half the 10th percentile of the
/// per-run maxima, so nearly every true exhalation clears it while silence
/// (statistic near 0) does not.
pub fn calibrate_variance_threshold(run_maxima: &[f64]) -> Result<f64> {
    let q = crate::metrics::quantile(run_maxima, 0.10)
        .ok_or_else(|| Error::arg("run_maxima", "no labelled exhalations to calibrate on"))?;
    Ok(0.5 * q)
}

/// Onset time of every maximal run of ones.
pub fn events_from_mask(mask: &[u8], rate: f64) -> Vec<f64> {
    runs(mask).into_iter().map(|(a, _)| a as f64 / rate).collect()
}

fn window_span(window: &AnalysisWindow, rate: f64, n: usize) -> (usize, usize) {
    let a = ((window.start * rate).round() as usize).min(n);
    let b = ((window.end() * rate).round() as usize).min(n);
    (a, b)
}

/// Validates detected runs against the envelope of one analysis window.
///
/// `runs` are `(start, end)` sample ranges over the whole segment; those whose
/// onset lies in the window are candidates. A candidate survives when a peak of
/// the detrended, smoothed envelope of `signal[window]` falls inside its run.
/// Survivors closer than `min_spacing` to the previously kept one are dropped.
pub fn confirm_with_envelope(
    runs: &[(usize, usize)],
    signal: &[f64],
    rate: f64,
    window: &AnalysisWindow,
    cfg: &PostprocessConfig,
    provenance: Provenance,
) -> Result<EventSeries> {
    let (wa, wb) = window_span(window, rate, signal.len());
    let candidates: Vec<(usize, usize)> = runs
        .iter()
        .copied()
        .filter(|&(a, _)| window.contains(a as f64 / rate))
        .collect();
    let mut events: Vec<Event> = Vec::new();
    if !candidates.is_empty() && wb - wa >= 3 {
        let env = hilbert_envelope(&signal[wa..wb])?;
        let env = moving_average(&env, cfg.envelope_smooth, rate)?;
        let env = detrend_linear(&env)?;
        let peaks = find_peaks(&env, rate, &PeakConstraints::new(cfg.min_spacing, MinHeight::None)?);
        let peaks: Vec<usize> = peaks.into_iter().map(|p| p + wa).collect();
        let mut last: Option<f64> = None;
        for (a, b) in candidates {
            // first peak at or after the run start
            let k = peaks.partition_point(|&p| p < a);
            if k == peaks.len() || peaks[k] >= b {
                continue;
            }
            let t = a as f64 / rate;
            if last.is_some_and(|l| t - l < cfg.min_spacing) {
                continue;
            }
            last = Some(t);
            events.push(Event {
                time: t,
                confidence: None,
            });
        }
    }
    Ok(EventSeries {
        events,
        window: *window,
        provenance,
    })
}

/// Windowed rates from validated events.
pub fn rates_from_events(series: &[EventSeries], source: Provenance) -> RateSeries {
    RateSeries {
        entries: series.iter().map(|s| rate_entry(s.window, &s.times())).collect(),
        source,
    }
}

/// Run counts after each stage, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCounts {
    pub smoothed: usize,
    pub gated: usize,
    /// Sum over windows of events kept after envelope confirmation.
    pub confirmed: usize,
    /// Sum over windows of candidate runs before confirmation.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Postprocessed {
    pub mask: Vec<u8>,
    pub series: Vec<EventSeries>,
    pub rates: RateSeries,
    pub counts: StageCounts,
}

/// Full chain: smoothing, variance gate, per-window envelope confirmation,
/// windowed rates. `signal` is the detector's analysis channel (the mean of
/// both channels when both were used).
pub fn postprocess(
    pred: &[u8],
    signal: &[f64],
    rate: f64,
    windows: &[AnalysisWindow],
    cfg: &PostprocessConfig,
    provenance: Provenance,
) -> Result<Postprocessed> {
    if pred.len() != signal.len() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, signal {}",
            pred.len(),
            signal.len()
        )));
    }
    let smoothed = smooth_mask(pred, rate, cfg.smooth_window, cfg.smooth_threshold)?;
    let gated = variance_gate(&smoothed, signal, rate, cfg.variance_window, cfg.variance_threshold)?;
    let gated_runs = runs(&gated);
    let mut counts = StageCounts {
        smoothed: runs(&smoothed).len(),
        gated: gated_runs.len(),
        ..Default::default()
    };
    let mut series = Vec::with_capacity(windows.len());
    for w in windows {
        counts.candidates += gated_runs.iter().filter(|&&(a, _)| w.contains(a as f64 / rate)).count();
        let s = confirm_with_envelope(&gated_runs, signal, rate, w, cfg, provenance)?;
        counts.confirmed += s.events.len();
        series.push(s);
    }
    let rates = rates_from_events(&series, provenance);
    Ok(Postprocessed {
        mask: gated,
        series,
        rates,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::windows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(start: f64, length: f64) -> AnalysisWindow {
        AnalysisWindow {
            index: 0,
            start,
            length,
            hop: length / 2.0,
        }
    }

    #[test]
    fn smoothing_examples() {
        let mut y = vec![0u8; 4410];
        y[2000] = 1;
        assert!(smooth_and_threshold(&y, 4410.0).unwrap().iter().all(|&v| v == 0));

        let mut y = vec![0u8; 4410];
        y[1000..1441].iter_mut().for_each(|v| *v = 1);
        let s = smooth_and_threshold(&y, 4410.0).unwrap();
        assert!(s[1000..1441].iter().all(|&v| v == 1));

        // 45 ones centred in a 441-sample window: 45/441 >= 0.1 at the centre
        let mut y = vec![0u8; 2000];
        y[978..1023].iter_mut().for_each(|v| *v = 1);
        let s = smooth_and_threshold(&y, 4410.0).unwrap();
        assert_eq!(s[1000], 1);
        let ones_in_window = y[1000 - 220..=1000 + 220].iter().filter(|&&v| v == 1).count();
        assert_eq!(ones_in_window, 45);

        assert!(smooth_and_threshold(&[0, 2], 10.0).is_err());
    }

    #[test]
    fn gate_examples() {
        let rate = 1000.0;
        let mask = vec![1u8; 500];
        let silence = vec![0.0; 500];
        let g = variance_gate(&mask, &silence, rate, 0.1, 0.8).unwrap();
        assert!(g.iter().all(|&v| v == 0));

        // quiet run then loud run
        let mut mask = vec![0u8; 2000];
        mask[100..400].iter_mut().for_each(|v| *v = 1);
        mask[1200..1500].iter_mut().for_each(|v| *v = 1);
        let signal: Vec<f64> = (0..2000)
            .map(|i| {
                let a = if (1200..1500).contains(&i) { 4.0 } else { 0.01 };
                // alternating 0 and a gives |x| variance near a^2 / 4
                if i % 2 == 0 {
                    a
                } else {
                    0.0
                }
            })
            .collect();
        let stat = gate_statistic(&signal, rate, 0.1).unwrap();
        assert!(stat[1300] > 0.8 && stat[200] < 0.8);
        let g = variance_gate(&mask, &signal, rate, 0.1, 0.8).unwrap();
        assert!(g[100..400].iter().all(|&v| v == 0));
        assert_eq!(&g[1200..1500], &mask[1200..1500]);

        let ident = variance_gate(&mask, &silence_like(2000), rate, 0.1, 0.0).unwrap();
        assert_eq!(ident, mask);
        assert!(variance_gate(&mask, &[0.0; 3], rate, 0.1, 0.8).is_err());
    }

    fn silence_like(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    #[test]
    fn events_from_runs() {
        let mut m = vec![0u8; 1000];
        m[100..150].iter_mut().for_each(|v| *v = 1);
        m[900..950].iter_mut().for_each(|v| *v = 1);
        assert_eq!(events_from_mask(&m, 100.0), vec![1.0, 9.0]);
        assert!(events_from_mask(&[0; 10], 100.0).is_empty());
        assert_eq!(events_from_mask(&[1, 1, 0, 1], 1.0), vec![0.0, 3.0]);
    }

    /// Bursts with a Gaussian envelope centred `width/2` after each onset.
    fn bursts(onsets: &[f64], width: f64, rate: f64, dur: f64) -> Vec<f64> {
        let n = (dur * rate) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let env: f64 = onsets
                    .iter()
                    .map(|&o| (-((t - o - width / 2.0) / (width / 6.0)).powi(2)).exp())
                    .sum();
                env * (2.0 * std::f64::consts::PI * 40.0 * t).sin()
            })
            .collect()
    }

    fn runs_at(onsets: &[f64], width: f64, rate: f64) -> Vec<(usize, usize)> {
        onsets
            .iter()
            .map(|&o| ((o * rate).round() as usize, ((o + width) * rate).round() as usize))
            .collect()
    }

    #[test]
    fn confirmation_keeps_peaked_runs_and_spaces_them() {
        let rate = 200.0;
        let cfg = PostprocessConfig::default();
        let w = window(0.0, 4.0);
        let sig = bursts(&[1.0, 2.0], 0.2, rate, 4.0);
        // a run over the first burst and one over empty signal
        let runs = [(200, 240), (600, 640)];
        let s = confirm_with_envelope(&runs, &sig, rate, &w, &cfg, Provenance::Tcn).unwrap();
        assert_eq!(s.times(), vec![1.0]);

        let flat = vec![0.0; 800];
        let s = confirm_with_envelope(&runs, &flat, rate, &w, &cfg, Provenance::Tcn).unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn spacing_keeps_the_earlier_event() {
        // three confirmed runs at 0.0, 0.25 and 0.60 s, each holding a peak
        let rate = 1000.0;
        let cfg = PostprocessConfig {
            min_spacing: 0.30,
            ..Default::default()
        };
        // envelope peaks at 0.30 s and 0.65 s; the middle run holds both
        let env_sig = bursts(&[0.25, 0.60], 0.1, rate, 3.0);
        let runs = [(0, 400), (250, 700), (600, 900)];
        let s = confirm_with_envelope(&runs, &env_sig, rate, &window(0.0, 3.0), &cfg, Provenance::Sp).unwrap();
        assert_eq!(s.times(), vec![0.0, 0.6]);
    }

    #[test]
    fn rates_from_periodic_events() {
        let w = window(0.0, 10.0);
        let ev: Vec<Event> = (0..20)
            .map(|k| Event {
                time: 0.5 * k as f64,
                confidence: None,
            })
            .collect();
        let s = EventSeries {
            events: ev,
            window: w,
            provenance: Provenance::Tcn,
        };
        let r = rates_from_events(std::slice::from_ref(&s), Provenance::Tcn);
        assert!((r.entries[0].rr.unwrap() - 120.0).abs() < 1e-9);
        let one = EventSeries {
            events: vec![Event {
                time: 1.0,
                confidence: None,
            }],
            ..s
        };
        assert_eq!(rates_from_events(&[one], Provenance::Tcn).entries[0].rr, None);
    }

    #[test]
    fn chain_recovers_100_bpm() {
        let rate = 1000.0;
        let dur = 30.0;
        let onsets: Vec<f64> = (0..50)
            .map(|k| 0.2 + 0.6 * k as f64)
            .filter(|&t| t < dur - 0.5)
            .collect();
        let sig = bursts(&onsets, 0.25, rate, dur);
        let mut pred = vec![0u8; sig.len()];
        for (a, b) in runs_at(&onsets, 0.25, rate) {
            let b = b.min(pred.len());
            pred[a..b].iter_mut().for_each(|v| *v = 1);
        }
        let win = windows(dur, 10.0, 5.0).unwrap();
        let cfg = PostprocessConfig {
            variance_threshold: 0.0,
            ..Default::default()
        };
        let out = postprocess(&pred, &sig, rate, &win, &cfg, Provenance::Tcn).unwrap();
        for e in &out.rates.entries {
            assert!((e.rr.unwrap() - 100.0).abs() < 1.0, "{e:?}");
        }
    }

    #[test]
    fn random_masks_respect_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rate = 100.0;
        let cfg = PostprocessConfig {
            variance_threshold: 0.01,
            ..Default::default()
        };
        for _ in 0..300 {
            let n = rng.random_range(1000..4000);
            let p = rng.random_range(0.01..0.6);
            let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(p))).collect();
            let sig: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let win = windows(n as f64 / rate, 10.0, 5.0).unwrap();
            let out = postprocess(&pred, &sig, rate, &win, &cfg, Provenance::Tcn).unwrap();
            assert!(out.counts.gated <= out.counts.smoothed);
            assert!(out.counts.smoothed <= runs(&pred).len());
            assert!(out.counts.confirmed <= out.counts.candidates);
            for s in &out.series {
                s.validate(0.30).unwrap();
            }
        }
    }

    #[test]
    fn calibration_rule() {
        let maxima: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        // 10th percentile with interpolation: 0.1 + 0.9 * 0.1 = 0.19
        assert!((calibrate_variance_threshold(&maxima).unwrap() - 0.095).abs() < 1e-12);
        assert!(calibrate_variance_threshold(&[]).is_err());
    }
}
