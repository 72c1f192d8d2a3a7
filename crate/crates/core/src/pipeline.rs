//! End-to-end detectors and the leave-one-subject-out evaluation harness.

use std::fmt::Write as _;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioSegment, ChannelSel};
use crate::error::{Error, Result};
use crate::labels::{reference_rates, to_binary_series, LabelTrack, Provenance, RateSeries, WindowSpec};
use crate::metrics::{self, paired_rates, score_samples, timed, AgreementReport, ConfusionCounts};
use crate::postprocess::{
    calibrate_variance_threshold, postprocess, run_variance_maxima, EventSeries, PostprocessConfig, Postprocessed,
};
use crate::sp::{sp_events, sp_rates, sp_respiratory_signal, SpConfig};
use crate::tcn::{
    predict_from_probs, rescale_symmetric, train_with, EpochLog, LabelledSequence, ModelInfo, TcnConfig, TcnModel,
    TrainSpec, TrainingLog,
};

/// Detector input: the selected channels, each scaled into `[-1, 1]`.
pub fn model_input(seg: &AudioSegment, sel: ChannelSel) -> Result<Vec<Vec<f64>>> {
    let chans: Vec<Vec<f64>> = seg.select(sel)?.into_iter().map(<[f64]>::to_vec).collect();
    Ok(rescale_symmetric(&chans))
}

/// Signal the postprocessing statistics are computed on: the selected
/// channel, or the mean of both, scaled into `[-1, 1]`.
pub fn gate_signal(seg: &AudioSegment, sel: ChannelSel) -> Result<Vec<f64>> {
    let x = seg.analysis_signal(sel)?;
    Ok(rescale_symmetric(&[x]).remove(0))
}

/// Per-sample reference labels for a segment.
pub fn reference_mask(seg: &AudioSegment, track: &LabelTrack) -> Result<Vec<u8>> {
    let mut m = to_binary_series(track, seg.sample_rate(), seg.duration())?;
    m.resize(seg.len(), 0);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnDetection {
    /// Raw per-sample argmax labels.
    pub labels: Vec<u8>,
    pub post: Postprocessed,
}

/// Runs the network on a segment and postprocesses its labels. The gate
/// threshold comes from `post`; callers usually take it from the model.
pub fn detect_tcn(
    model: &TcnModel,
    seg: &AudioSegment,
    sel: ChannelSel,
    post: &PostprocessConfig,
    win: WindowSpec,
) -> Result<TcnDetection> {
    if sel.input_channels() != model.config().input_channels {
        return Err(Error::Validation(format!(
            "model takes {} channels; --channel {sel} gives {}",
            model.config().input_channels,
            sel.input_channels()
        )));
    }
    let input = model_input(seg, sel)?;
    let labels = predict_from_probs(&model.forward(&input, false)?);
    let signal = gate_signal(seg, sel)?;
    let grid = win.grid(seg.duration())?;
    let post = postprocess(&labels, &signal, seg.sample_rate(), &grid, post, Provenance::Tcn)?;
    Ok(TcnDetection { labels, post })
}

/// Postprocessing settings for a model, using its calibrated gate when present.
pub fn post_config_for(model: &TcnModel) -> PostprocessConfig {
    let mut c = PostprocessConfig::default();
    if let Some(g) = model.info.gate_threshold {
        c.variance_threshold = g;
    }
    c
}

/// The signal-processing estimator on one channel (0 or 1).
pub fn detect_sp(
    seg: &AudioSegment,
    channel: usize,
    cfg: &SpConfig,
    win: WindowSpec,
) -> Result<(RateSeries, Vec<EventSeries>)> {
    if channel >= seg.num_channels() {
        return Err(Error::arg(
            "channel",
            format!("segment has {} channels", seg.num_channels()),
        ));
    }
    let mono = AudioSegment::new(vec![seg.channel(channel).to_vec()], seg.sample_rate(), seg.meta.clone())?;
    let resp = sp_respiratory_signal(&mono, cfg)?;
    let grid = win.grid(seg.duration())?;
    Ok((sp_rates(&resp, &grid, cfg)?, sp_events(&resp, &grid, cfg)?))
}

/// Gate threshold calibrated on labelled segments.
pub fn calibrate_gate(data: &[(&AudioSegment, &LabelTrack)], sel: ChannelSel, window: f64) -> Result<f64> {
    let mut maxima = Vec::new();
    for (seg, track) in data {
        let mask = reference_mask(seg, track)?;
        let sig = gate_signal(seg, sel)?;
        maxima.extend(run_variance_maxima(&mask, &sig, seg.sample_rate(), window)?);
    }
    calibrate_variance_threshold(&maxima)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooSubject {
    pub id: String,
    pub audio: AudioSegment,
    pub labels: LabelTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooConfig {
    pub tcn: TcnConfig,
    pub train: TrainSpec,
    pub channel: ChannelSel,
    pub seed: u64,
    pub sp: SpConfig,
    pub window: WindowSpec,
    /// Also score the signal-processing estimator on both channels.
    pub with_sp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub test_subject: String,
    pub val_subject: String,
    pub counts: ConfusionCounts,
    pub f1: f64,
    pub gate_threshold: f64,
    /// `(reference, estimate)` per common window.
    pub tcn_pairs: Vec<(f64, f64)>,
    pub sp_pairs: [Vec<(f64, f64)>; 2],
    pub log: TrainingLog,
    pub detect_time: Duration,
    pub duration: f64,
}

impl FoldResult {
    pub fn mae(&self) -> Option<f64> {
        metrics::mae_of_pairs(&self.tcn_pairs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooReport {
    pub folds: Vec<FoldResult>,
    pub rate: f64,
    pub config: LooConfig,
}

impl LooReport {
    pub fn f1_values(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.f1).collect()
    }

    pub fn median_f1(&self) -> f64 {
        metrics::median(&self.f1_values()).unwrap_or(0.0)
    }

    pub fn tcn_agreement(&self) -> AgreementReport {
        let it: Vec<Vec<(f64, f64)>> = self.folds.iter().map(|f| f.tcn_pairs.clone()).collect();
        AgreementReport::from_iterations(&it)
    }

    pub fn sp_agreement(&self, channel: usize) -> AgreementReport {
        let it: Vec<Vec<(f64, f64)>> = self.folds.iter().map(|f| f.sp_pairs[channel].clone()).collect();
        AgreementReport::from_iterations(&it)
    }

    /// Per-fold CSV `subject,val_subject,f1,mae_tcn,mae_sp_c1,mae_sp_c2,gate,best_epoch,timing_pct`,
    /// sorted by subject id.
    pub fn folds_csv(&self) -> String {
        let mut rows: Vec<&FoldResult> = self.folds.iter().collect();
        rows.sort_by(|a, b| a.test_subject.cmp(&b.test_subject));
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from("subject,val_subject,f1,mae_tcn,mae_sp_c1,mae_sp_c2,gate,best_epoch,timing_pct\n");
        for f in rows {
            let _ = writeln!(
                out,
                "{},{},{:.4},{},{},{},{:.6},{},{:.3}",
                f.test_subject,
                f.val_subject,
                f.f1,
                opt(f.mae()),
                opt(metrics::mae_of_pairs(&f.sp_pairs[0])),
                opt(metrics::mae_of_pairs(&f.sp_pairs[1])),
                f.gate_threshold,
                f.log.best_epoch,
                metrics::timing_ratio(f.detect_time, f.duration)
            );
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let depth = self.config.tcn.depth.to_string();
        let input = self.config.channel.to_string();
        let det = metrics::DetectionRow {
            model: "TCN".into(),
            depth: depth.clone(),
            input: input.clone(),
            fs: self.rate,
            f1: self.f1_values(),
        };
        let mut rows = vec![metrics::RateRow {
            model: "TCN".into(),
            depth,
            input,
            fs: self.rate,
            report: self.tcn_agreement(),
        }];
        if self.config.with_sp {
            for ch in 0..2 {
                rows.push(metrics::RateRow {
                    model: "SP".into(),
                    depth: "-".into(),
                    input: format!("c{}", ch + 1),
                    fs: self.rate,
                    report: self.sp_agreement(ch),
                });
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "Detection\n{}", metrics::detection_table(&[det]));
        let _ = writeln!(out, "Respiratory rate\n{}", metrics::rate_table(&rows));
        let _ = writeln!(out, "TCN agreement\n{}", self.tcn_agreement().summary_text());
        out
    }
}

/// Progress notifications from [`run_loo`].
#[derive(Debug, Clone, PartialEq)]
pub enum LooEvent<'a> {
    FoldStart { test: &'a str, val: &'a str },
    Epoch(EpochLog),
    FoldDone(&'a FoldResult),
}

fn labelled(s: &LooSubject, sel: ChannelSel) -> Result<LabelledSequence> {
    Ok(LabelledSequence {
        input: model_input(&s.audio, sel)?,
        labels: reference_mask(&s.audio, &s.labels)?,
    })
}

/// Leave-one-subject-out: each subject is the test set once, one other
/// (drawn with the seeded generator) is validation, the rest train.
pub fn run_loo(subjects: &[LooSubject], cfg: &LooConfig, mut progress: impl FnMut(LooEvent<'_>)) -> Result<LooReport> {
    if subjects.len() < 3 {
        return Err(Error::Validation(format!(
            "leave-one-out needs at least 3 subjects, got {}",
            subjects.len()
        )));
    }
    let rate = subjects[0].audio.sample_rate();
    if subjects
        .iter()
        .any(|s| !crate::audio::rates_equal(s.audio.sample_rate(), rate))
    {
        return Err(Error::Validation("subjects have different sample rates".into()));
    }
    let mut ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("subject ids must be unique".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<LabelledSequence> = subjects
        .iter()
        .map(|s| labelled(s, cfg.channel))
        .collect::<Result<_>>()?;
    let mut folds = Vec::with_capacity(subjects.len());
    for (ti, test) in subjects.iter().enumerate() {
        let others: Vec<usize> = (0..subjects.len()).filter(|&i| i != ti).collect();
        let vi = *others.choose(&mut rng).expect("at least two other subjects");
        progress(LooEvent::FoldStart {
            test: &test.id,
            val: &subjects[vi].id,
        });
        let train_idx: Vec<usize> = others.iter().copied().filter(|&i| i != vi).collect();
        let train_set: Vec<LabelledSequence> = train_idx.iter().map(|&i| data[i].clone()).collect();
        let val_set = vec![data[vi].clone()];
        let init = TcnModel::new(cfg.tcn.clone(), cfg.seed.wrapping_add(ti as u64))?;
        let (mut model, log) = train_with(
            &init,
            &train_set,
            &val_set,
            &cfg.train,
            rate,
            cfg.seed.wrapping_add(1000 + ti as u64),
            |e| progress(LooEvent::Epoch(*e)),
        )?;
        let gate_data: Vec<(&AudioSegment, &LabelTrack)> = train_idx
            .iter()
            .map(|&i| (&subjects[i].audio, &subjects[i].labels))
            .collect();
        let gate = calibrate_gate(&gate_data, cfg.channel, PostprocessConfig::default().variance_window)?;
        model.info = ModelInfo {
            sample_rate: Some(rate),
            channel: Some(cfg.channel),
            gate_threshold: Some(gate),
        };
        let post_cfg = post_config_for(&model);
        let (det, detect_time) = timed(|| detect_tcn(&model, &test.audio, cfg.channel, &post_cfg, cfg.window));
        let det = det?;
        let counts = score_samples(&det.labels, &data[ti].labels)?;
        let grid = cfg.window.grid(test.audio.duration())?;
        let reference = reference_rates(&test.labels, &grid);
        let tcn_pairs = paired_rates(&reference, &det.post.rates)?;
        let mut sp_pairs = [Vec::new(), Vec::new()];
        if cfg.with_sp {
            for (ch, slot) in sp_pairs.iter_mut().enumerate().take(test.audio.num_channels()) {
                let (rates, _) = detect_sp(&test.audio, ch, &cfg.sp, cfg.window)?;
                *slot = paired_rates(&reference, &rates)?;
            }
        }
        let fold = FoldResult {
            test_subject: test.id.clone(),
            val_subject: subjects[vi].id.clone(),
            f1: counts.f1(),
            counts,
            gate_threshold: gate,
            tcn_pairs,
            sp_pairs,
            log,
            detect_time,
            duration: test.audio.duration(),
        };
        progress(LooEvent::FoldDone(&fold));
        folds.push(fold);
    }
    Ok(LooReport {
        folds,
        rate,
        config: cfg.clone(),
    })
}
