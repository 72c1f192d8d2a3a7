//! Seeded generator of exercise-respiration audio with exact ground truth.
//!
//! Exhalations are band-limited noise bursts; their onsets follow a
//! piecewise-linear breathing-rate profile. Background noise, per-channel gains
//! and optional hoof-beat thuds make up the rest of the scene.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioSegment, SegmentMeta};
use crate::dsp::{apply_filter, FilterSpec};
use crate::error::{Error, Result};
use crate::labels::{
    reference_rates, windows, write_labels, LabelInterval, LabelTrack, RateSeries, WINDOW_HOP, WINDOW_LENGTH,
};

/// Lowest and highest breathing rate a profile may reach, breaths per minute.
pub const RR_RANGE: (f64, f64) = (40.0, 170.0);

/// Breathing rate as `(time s, bpm)` knots joined linearly, constant beyond
/// the first and last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RrProfile {
    pub knots: Vec<(f64, f64)>,
}

impl RrProfile {
    pub fn constant(bpm: f64) -> Self {
        RrProfile {
            knots: vec![(0.0, bpm)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Scenario("rate profile has no knots".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Scenario("profile knot times must increase".into()));
            }
        }
        for &(_, r) in &self.knots {
            if !(RR_RANGE.0..=RR_RANGE.1).contains(&r) {
                return Err(Error::Scenario(format!(
                    "rate {r} bpm outside {}-{} bpm",
                    RR_RANGE.0, RR_RANGE.1
                )));
            }
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if t <= w[1].0 {
                let f = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }

    /// Time after `t0` at which exactly one breath (phase 1) has elapsed.
    /// Phase is the integral of `rate / 60`, quadratic on each linear piece,
    /// so each piece is inverted in closed form.
    pub fn next_breath(&self, t0: f64) -> f64 {
        let mut t = t0;
        let mut left = 1.0;
        loop {
            let r0 = self.rate_at(t);
            let piece_end = self
                .knots
                .iter()
                .map(|k| k.0)
                .find(|&kt| kt > t)
                .unwrap_or(f64::INFINITY);
            let slope = if piece_end.is_finite() {
                (self.rate_at(piece_end) - r0) / (piece_end - t)
            } else {
                0.0
            };
            // phase over [t, t + tau] is (r0 tau + slope tau^2 / 2) / 60
            let need = 60.0 * left;
            let tau = 2.0 * need / (r0 + (r0 * r0 + 2.0 * slope * need).max(0.0).sqrt());
            if t + tau <= piece_end {
                return t + tau;
            }
            let span = piece_end - t;
            left -= (r0 * span + slope * span * span / 2.0) / 60.0;
            t = piece_end;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstShape {
    /// Seconds.
    pub attack: f64,
    pub sustain: f64,
    pub release: f64,
}

impl BurstShape {
    pub fn duration(&self) -> f64 {
        self.attack + self.sustain + self.release
    }

    /// Raised-cosine ramps around a flat top; `tau` in seconds since onset.
    pub fn envelope(&self, tau: f64) -> f64 {
        if tau < 0.0 || tau >= self.duration() {
            0.0
        } else if tau < self.attack {
            0.5 - 0.5 * (PI * tau / self.attack).cos()
        } else if tau < self.attack + self.sustain {
            1.0
        } else {
            let u = (tau - self.attack - self.sustain) / self.release;
            0.5 + 0.5 * (PI * u).cos()
        }
    }
}

impl Default for BurstShape {
    fn default() -> Self {
        BurstShape {
            attack: 0.05,
            sustain: 0.12,
            release: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
    pub rr_profile: RrProfile,
    pub burst_shape: BurstShape,
    /// Carrier noise band, Hz.
    pub burst_band: (f64, f64),
    /// Peak amplitude of a burst before gains.
    pub burst_amplitude: f64,
    /// Standard deviation of the per-cycle timing perturbation, seconds.
    /// Draws are truncated at three standard deviations.
    pub timing_jitter: f64,
    /// Burst amplitudes are scaled by a uniform factor in `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
    /// One gain per output channel.
    pub channel_gains: Vec<f64>,
    /// Ratio of mean burst power to background noise power per channel, dB.
    /// `None` means no background noise.
    pub snr_db: Option<f64>,
    /// Hoof-beat thuds per second, if any.
    pub hoofbeat_rate: Option<f64>,
    pub hoofbeat_amplitude: f64,
    /// Time of the first onset, seconds.
    pub first_onset: f64,
    pub seed: u64,
    pub horse_id: String,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            duration: 60.0,
            rate: 4410.0,
            rr_profile: RrProfile::constant(100.0),
            burst_shape: BurstShape::default(),
            burst_band: (200.0, 800.0),
            burst_amplitude: 0.4,
            timing_jitter: 0.01,
            amplitude_jitter: 0.1,
            channel_gains: vec![0.6, 1.0],
            snr_db: Some(20.0),
            hoofbeat_rate: None,
            hoofbeat_amplitude: 0.2,
            first_onset: 0.2,
            seed: 0,
            horse_id: "synthetic".into(),
        }
    }
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.duration > 0.0) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !(self.rate > 0.0) {
            return bad(format!("rate {} must be positive", self.rate));
        }
        self.rr_profile.validate()?;
        let b = &self.burst_shape;
        if !(b.attack > 0.0 && b.sustain >= 0.0 && b.release > 0.0) {
            return bad("burst attack and release must be positive".into());
        }
        let (lo, hi) = self.burst_band;
        if !(lo > 0.0 && lo < hi) {
            return bad(format!("burst band ({lo}, {hi}) is empty"));
        }
        if lo >= self.carrier_high() {
            return bad(format!("burst band starts above Nyquist at {} Hz", self.rate));
        }
        if self.channel_gains.is_empty() || self.channel_gains.len() > 2 {
            return bad(format!("{} channel gains; expected 1 or 2", self.channel_gains.len()));
        }
        if !(self.timing_jitter >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad("jitter must be non-negative and amplitude jitter below 1".into());
        }
        if self.hoofbeat_rate.is_some_and(|h| !(h > 0.0)) {
            return bad("hoofbeat rate must be positive".into());
        }
        let min_gap = 60.0 / self.rr_profile.max() - 3.0 * self.timing_jitter;
        if min_gap <= b.duration() {
            return bad(format!(
                "bursts of {:.3} s overlap: shortest cycle can be {min_gap:.3} s",
                b.duration()
            ));
        }
        Ok(())
    }

    /// Upper carrier edge kept below 0.45 of the sampling rate.
    fn carrier_high(&self) -> f64 {
        self.burst_band.1.min(0.45 * self.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub audio: AudioSegment,
    pub labels: LabelTrack,
    pub truth: RateSeries,
    pub onsets: Vec<f64>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return sd * z;
        }
    }
}

fn onsets(scn: &SynthScenario, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let last_start = scn.duration - scn.burst_shape.duration();
    let mut out = Vec::new();
    let mut t = scn.first_onset;
    while t <= last_start {
        if t >= 0.0 {
            out.push(t);
        }
        let next = scn.rr_profile.next_breath(t);
        t = next + truncated_normal(rng, scn.timing_jitter);
    }
    out
}

/// Generates audio, exhalation labels and the windowed ground-truth rates.
pub fn generate(scn: &SynthScenario) -> Result<SynthOutput> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let n = (scn.duration * scn.rate).round() as usize;
    let rate = scn.rate;

    // shared carrier: white noise limited to the burst band, unit RMS
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let band = FilterSpec::bandpass(scn.burst_band.0, scn.carrier_high(), 4);
    let mut carrier = apply_filter(&white, rate, &band)?;
    let rms = (carrier.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        carrier.iter_mut().for_each(|v| *v /= rms);
    }

    let onsets = onsets(scn, &mut rng);
    let shape = scn.burst_shape;
    let mut source = vec![0.0; n];
    let mut intervals = Vec::with_capacity(onsets.len());
    for &t0 in &onsets {
        let amp = scn.burst_amplitude * (1.0 + scn.amplitude_jitter * rng.random_range(-1.0..=1.0));
        let a = (t0 * rate).ceil() as usize;
        let b = (((t0 + shape.duration()) * rate).ceil() as usize).min(n);
        for i in a..b {
            source[i] += amp * shape.envelope(i as f64 / rate - t0) * carrier[i];
        }
        intervals.push(LabelInterval::exhalation(t0, t0 + shape.duration()));
    }
    // burst peaks use a third of the carrier's dynamic range
    source.iter_mut().for_each(|v| *v /= 3.0);

    let thuds: Option<Vec<f64>> = scn.hoofbeat_rate.map(|h| {
        let mut x = vec![0.0; n];
        let freq = (0.2 * rate).min(60.0);
        let mut t = 1.0 / h * rng.random_range(0.0..1.0);
        while t < scn.duration {
            let a = (t * rate).ceil() as usize;
            let len = (0.08 * rate) as usize;
            for (i, v) in x.iter_mut().enumerate().take((a + len).min(n)).skip(a) {
                let tau = i as f64 / rate - t;
                *v += scn.hoofbeat_amplitude * (-tau / 0.02).exp() * (2.0 * PI * freq * tau).sin();
            }
            t += 1.0 / h;
        }
        x
    });

    let burst_power = source.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut channels = Vec::with_capacity(scn.channel_gains.len());
    for &g in &scn.channel_gains {
        let noise_sd = scn
            .snr_db
            .map_or(0.0, |snr| (g * g * burst_power / 10f64.powf(snr / 10.0)).sqrt());
        let ch: Vec<f64> = (0..n)
            .map(|i| {
                let noise: f64 = if noise_sd > 0.0 {
                    noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                g * source[i] + thuds.as_ref().map_or(0.0, |th| g * th[i]) + noise
            })
            .collect();
        channels.push(ch);
    }

    let meta = SegmentMeta::new(scn.horse_id.clone(), "synthetic");
    let audio = AudioSegment::new(channels, rate, meta)?;
    let labels = LabelTrack::new(intervals, scn.horse_id.clone())?;
    let grid = windows(scn.duration, WINDOW_LENGTH, WINDOW_HOP)?;
    let truth = reference_rates(&labels, &grid);
    Ok(SynthOutput {
        audio,
        labels,
        truth,
        onsets,
    })
}

/// How subjects of a corpus differ from the base scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusVariation {
    /// Baseline rate of subject 0, bpm; subject `k` gets `start + k * step`.
    pub baseline_start: f64,
    pub baseline_step: f64,
    /// Rate swing within a segment, bpm: the profile rises by this much at
    /// mid-segment and settles halfway back by the end.
    pub swing: f64,
    /// Maximum shift of each carrier band edge, Hz.
    pub band_shift: f64,
    /// Maximum deviation from the base SNR, dB.
    pub snr_spread: f64,
    /// Total corpus duration; `None` keeps the base duration per subject.
    pub total_duration: Option<f64>,
}

impl Default for CorpusVariation {
    fn default() -> Self {
        CorpusVariation {
            baseline_start: 60.0,
            baseline_step: 7.0,
            swing: 8.0,
            band_shift: 50.0,
            snr_spread: 3.0,
            total_duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub scenario: SynthScenario,
    pub data: SynthOutput,
}

/// Subject ids `S01`, `S02`, ...
pub fn subject_id(k: usize) -> String {
    format!("S{:02}", k + 1)
}

/// Per-subject scenarios derived from `base`.
pub fn corpus_scenarios(n_subjects: usize, base: &SynthScenario, var: &CorpusVariation) -> Result<Vec<SynthScenario>> {
    if n_subjects < 3 {
        return Err(Error::arg("n_subjects", format!("need at least 3, got {n_subjects}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ 0x5eed_c0de);
    let duration = var
        .total_duration
        .map_or(base.duration, |total| total / n_subjects as f64);
    (0..n_subjects)
        .map(|k| {
            let baseline = var.baseline_start + var.baseline_step * k as f64;
            let mut s = base.clone();
            s.duration = duration;
            s.horse_id = subject_id(k);
            s.seed = rng.random();
            s.rr_profile = RrProfile {
                knots: vec![
                    (0.0, baseline),
                    (duration / 2.0, baseline + var.swing),
                    (duration, baseline + var.swing / 2.0),
                ],
            };
            let shift = |r: &mut ChaCha8Rng| var.band_shift * r.random_range(-1.0..=1.0);
            s.burst_band = (
                (base.burst_band.0 + shift(&mut rng)).max(20.0),
                base.burst_band.1 + shift(&mut rng),
            );
            s.snr_db = base
                .snr_db
                .map(|snr| snr + var.snr_spread * rng.random_range(-1.0..=1.0));
            s.channel_gains = base
                .channel_gains
                .iter()
                .map(|g| g * rng.random_range(0.8..=1.2))
                .collect();
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// Generates a leave-one-subject-out corpus.
pub fn loso_corpus(n_subjects: usize, base: &SynthScenario, var: &CorpusVariation) -> Result<Vec<Subject>> {
    corpus_scenarios(n_subjects, base, var)?
        .into_iter()
        .map(|s| {
            Ok(Subject {
                id: s.horse_id.clone(),
                data: generate(&s)?,
                scenario: s,
            })
        })
        .collect()
}

/// Paths written by [`write_output`].
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFiles {
    pub wav: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
}

/// Writes `<stem>.wav`, `<stem>.txt` (labels) and `<stem>_truth.csv`.
pub fn write_output(out: &SynthOutput, dir: impl AsRef<Path>, stem: &str) -> Result<WrittenFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = WrittenFiles {
        wav: dir.join(format!("{stem}.wav")),
        labels: dir.join(format!("{stem}.txt")),
        truth: dir.join(format!("{stem}_truth.csv")),
    };
    write_wav(&out.audio, &files.wav)?;
    write_labels(&out.labels, &files.labels)?;
    fs::write(&files.truth, out.truth.to_csv()).map_err(|e| Error::io(&files.truth, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(bpm: f64) -> SynthScenario {
        SynthScenario {
            rr_profile: RrProfile::constant(bpm),
            timing_jitter: 0.0,
            amplitude_jitter: 0.0,
            snr_db: None,
            duration: 20.0,
            rate: 2100.0,
            ..Default::default()
        }
    }

    #[test]
    fn constant_rate_onsets_are_periodic() {
        let out = generate(&quiet(120.0)).unwrap();
        for w in out.onsets.windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-12);
        }
        for e in &out.truth.entries {
            assert!((e.rr.unwrap() - 120.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = SynthScenario {
            duration: 15.0,
            hoofbeat_rate: Some(2.3),
            ..Default::default()
        };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthScenario { seed: 1, ..s }).unwrap();
        assert_ne!(a.audio, c.audio);
    }

    #[test]
    fn infeasible_scenarios_are_rejected() {
        let s = SynthScenario {
            rr_profile: RrProfile::constant(170.0),
            timing_jitter: 0.05,
            ..Default::default()
        };
        assert!(matches!(generate(&s), Err(Error::Scenario(_))));
        let s = SynthScenario {
            rr_profile: RrProfile::constant(200.0),
            ..Default::default()
        };
        assert!(generate(&s).is_err());
    }

    #[test]
    fn phase_inversion_matches_numeric_integration() {
        let p = RrProfile {
            knots: vec![(0.0, 60.0), (10.0, 150.0), (20.0, 90.0)],
        };
        let mut t = 0.3;
        for _ in 0..30 {
            let next = p.next_breath(t);
            // trapezoid integration of rate / 60 over [t, next]
            let steps = 20_000;
            let h = (next - t) / steps as f64;
            let phase: f64 = (0..steps)
                .map(|k| {
                    let a = t + k as f64 * h;
                    0.5 * h * (p.rate_at(a) + p.rate_at(a + h)) / 60.0
                })
                .sum();
            assert!((phase - 1.0).abs() < 1e-6, "{t}: {phase}");
            t = next;
        }
    }

    #[test]
    fn labels_cover_bursts_and_truth_follows_profile() {
        let s = SynthScenario {
            rr_profile: RrProfile {
                knots: vec![(0.0, 70.0), (60.0, 130.0)],
            },
            timing_jitter: 0.01,
            rate: 2100.0,
            ..Default::default()
        };
        let out = generate(&s).unwrap();
        out.labels.validate().unwrap();
        assert_eq!(out.labels.intervals.len(), out.onsets.len());
        for e in &out.truth.entries {
            let mid = e.window.start + 5.0;
            let want = s.rr_profile.rate_at(mid);
            // each cycle is off by at most 3 sd of jitter, in rate terms
            let tol = want * want / 60.0 * 3.0 * s.timing_jitter * 1.5 + 2.0;
            assert!((e.rr.unwrap() - want).abs() <= tol, "{mid}: {:?} vs {want}", e.rr);
        }
        // energy sits inside the labelled bursts
        let x = out.audio.channel(1);
        let mask = crate::labels::to_binary_series(&out.labels, 2100.0, out.audio.duration()).unwrap();
        let (mut inside, mut outside) = (0.0, 0.0);
        for (v, m) in x.iter().zip(&mask) {
            if *m == 1 {
                inside += v * v;
            } else {
                outside += v * v;
            }
        }
        assert!(inside > 20.0 * outside);
    }

    #[test]
    fn corpus_baselines_are_spread() {
        let base = SynthScenario {
            duration: 12.0,
            rate: 2100.0,
            ..Default::default()
        };
        let scn = corpus_scenarios(15, &base, &CorpusVariation::default()).unwrap();
        for i in 0..scn.len() {
            for j in 0..i {
                let d = (scn[i].rr_profile.knots[0].1 - scn[j].rr_profile.knots[0].1).abs();
                assert!(d >= 5.0);
            }
        }
        let var = CorpusVariation {
            total_duration: Some(947.0),
            ..Default::default()
        };
        let total: f64 = corpus_scenarios(15, &base, &var)
            .unwrap()
            .iter()
            .map(|s| s.duration)
            .sum();
        assert!((total - 947.0).abs() < 1e-9);
        assert!(corpus_scenarios(2, &base, &var).is_err());
    }
}
