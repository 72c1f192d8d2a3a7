//! Detection scores and rate-agreement statistics.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::labels::RateSeries;

/// 95 % two-sided normal quantile used for CI and limits of agreement.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0 or undefined.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Element-wise tally with class 1 as the positive class.
pub fn score_samples(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn f1(counts: &ConfusionCounts) -> f64 {
    counts.f1()
}

/// `(reference, estimate)` for every window where both series have a value.
pub fn paired_rates(reference: &RateSeries, estimate: &RateSeries) -> Result<Vec<(f64, f64)>> {
    if reference.entries.len() != estimate.entries.len() {
        return Err(Error::Shape(format!(
            "window grids differ: {} vs {} windows",
            reference.entries.len(),
            estimate.entries.len()
        )));
    }
    let mut out = Vec::new();
    for (r, e) in reference.entries.iter().zip(&estimate.entries) {
        if (r.window.start - e.window.start).abs() > 1e-9 {
            return Err(Error::Shape(format!(
                "window starts differ: {} vs {}",
                r.window.start, e.window.start
            )));
        }
        if let (Some(a), Some(b)) = (r.rr, e.rr) {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Mean absolute rate error over the common windows; `None` when there are none.
pub fn mae_per_iteration(reference: &RateSeries, estimate: &RateSeries) -> Result<Option<f64>> {
    let pairs = paired_rates(reference, estimate)?;
    Ok(mae_of_pairs(&pairs))
}

pub fn mae_of_pairs(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        None
    } else {
        Some(pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased (N-1) standard deviation; requires at least two values.
pub fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub ci: Option<f64>,
}

/// Mean, s.d. and 95 % CI half-width (`1.96 sd / sqrt(N)`) of per-iteration MAEs.
pub fn aggregate(maes: &[f64]) -> Result<Aggregate> {
    if maes.is_empty() {
        return Err(Error::arg("maes", "no iterations to aggregate"));
    }
    let sd = sample_sd(maes);
    Ok(Aggregate {
        n: maes.len(),
        mean: mean(maes),
        sd,
        ci: sd.map(|s| Z95 * s / (maes.len() as f64).sqrt()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltman {
    /// Mean of `reference - estimate`.
    pub mod_: f64,
    /// Half-width of the 95 % limits of agreement, `1.96 sd(diff)`.
    pub loa: f64,
    /// `((ref + est) / 2, ref - est)` per pair.
    pub points: Vec<(f64, f64)>,
}

impl BlandAltman {
    pub fn lower(&self) -> f64 {
        self.mod_ - self.loa
    }

    pub fn upper(&self) -> f64 {
        self.mod_ + self.loa
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mean_bpm,diff_bpm\n");
        for (m, d) in &self.points {
            let _ = writeln!(out, "{m:.6},{d:.6}");
        }
        out
    }
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.len() < 2 {
        return Err(Error::arg(
            "pairs",
            format!("need at least 2 pairs, got {}", pairs.len()),
        ));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(r, e)| r - e).collect();
    let sd = sample_sd(&diffs).unwrap_or(0.0);
    Ok(BlandAltman {
        mod_: mean(&diffs),
        loa: Z95 * sd,
        points: pairs.iter().map(|(r, e)| ((r + e) / 2.0, r - e)).collect(),
    })
}

/// Least-squares line `estimate = slope * reference + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(pairs: &[(f64, f64)]) -> Result<LinearFit> {
    if pairs.len() < 2 {
        return Err(Error::arg("pairs", "need at least 2 pairs"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("pairs", "reference values have zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit { slope, intercept, r2 })
}

pub fn pairs_to_csv(pairs: &[(f64, f64)]) -> String {
    let mut out = String::from("reference_bpm,estimate_bpm\n");
    for (r, e) in pairs {
        let _ = writeln!(out, "{r:.6},{e:.6}");
    }
    out
}

/// Quantile with linear interpolation between order statistics
/// (position `q * (n - 1)`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> Option<f64> {
    Some(quantile(values, 0.75)? - quantile(values, 0.25)?)
}

/// Computation time as a percentage of the audio duration it processed.
pub fn timing_ratio(elapsed: Duration, segment_duration: f64) -> f64 {
    100.0 * elapsed.as_secs_f64() / segment_duration
}

/// Runs `work` under a monotonic clock.
pub fn timed<T>(work: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let out = work();
    (out, t0.elapsed())
}

/// Rate agreement between a method and the reference across test iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    /// Per-iteration MAE; `None` where the iteration had no common window.
    pub per_iteration: Vec<Option<f64>>,
    pub aggregate: Option<Aggregate>,
    pub bland_altman: Option<BlandAltman>,
    pub fit: Option<LinearFit>,
    pub pairs: Vec<(f64, f64)>,
}

impl AgreementReport {
    /// Builds the report from each iteration's paired rates.
    pub fn from_iterations(iterations: &[Vec<(f64, f64)>]) -> Self {
        let per_iteration: Vec<Option<f64>> = iterations.iter().map(|p| mae_of_pairs(p)).collect();
        let maes: Vec<f64> = per_iteration.iter().flatten().copied().collect();
        let pairs: Vec<(f64, f64)> = iterations.iter().flatten().copied().collect();
        AgreementReport {
            aggregate: aggregate(&maes).ok(),
            bland_altman: bland_altman(&pairs).ok(),
            fit: linear_fit(&pairs).ok(),
            per_iteration,
            pairs,
        }
    }

    pub fn mae_ci_text(&self) -> String {
        match self.aggregate {
            Some(Aggregate { mean, ci: Some(ci), .. }) => format!("{mean:.2}±{ci:.2}"),
            Some(Aggregate { mean, .. }) => format!("{mean:.2}"),
            None => "n.a.".into(),
        }
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MAE±CI (bpm): {}", self.mae_ci_text());
        if let Some(a) = &self.aggregate {
            if let Some(sd) = a.sd {
                let _ = writeln!(out, "MAE s.d. (bpm): {sd:.3}");
            }
            let _ = writeln!(out, "iterations: {}", a.n);
        }
        if let Some(ba) = &self.bland_altman {
            let _ = writeln!(out, "MOD (bpm): {:.3}", ba.mod_);
            let _ = writeln!(out, "LOA (bpm): ±{:.3} [{:.3}, {:.3}]", ba.loa, ba.lower(), ba.upper());
        }
        if let Some(f) = &self.fit {
            let _ = writeln!(
                out,
                "fit: estimate = {:.4} * reference + {:.4}, R² = {:.4}",
                f.slope, f.intercept, f.r2
            );
        }
        let _ = writeln!(out, "paired windows: {}", self.pairs.len());
        out
    }
}

/// One line of the detection table (rank, model, depth, input, Fs, F1 median, F1 IQR).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub model: String,
    pub depth: String,
    pub input: String,
    pub fs: f64,
    pub f1: Vec<f64>,
}

/// One line of the rate table (rank, model, depth, input, Fs, MAE±CI, MOD, LOA).
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub model: String,
    pub depth: String,
    pub input: String,
    pub fs: f64,
    pub report: AgreementReport,
}

/// Detection table ranked by median F1, then narrower IQR.
pub fn detection_table(rows: &[DetectionRow]) -> String {
    let mut ranked: Vec<(&DetectionRow, f64, f64)> = rows
        .iter()
        .map(|r| (r, median(&r.f1).unwrap_or(0.0), iqr(&r.f1).unwrap_or(0.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)));
    let mut out = String::from("Rank\tModel\tDepth\tInput\tFs (Hz)\tF1 median\tF1 IQR\n");
    for (i, (r, med, q)) in ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
            i + 1,
            r.model,
            r.depth,
            r.input,
            r.fs,
            med,
            q
        );
    }
    out
}

/// Rate table ranked by mean MAE.
pub fn rate_table(rows: &[RateRow]) -> String {
    let key = |r: &RateRow| r.report.aggregate.map(|a| a.mean).unwrap_or(f64::INFINITY);
    let mut ranked: Vec<&RateRow> = rows.iter().collect();
    ranked.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let mut out = String::from("Rank\tModel\tDepth\tInput\tFs (Hz)\tMAE±CI (bpm)\tMOD (bpm)\tLOA (bpm)\n");
    for (i, r) in ranked.iter().enumerate() {
        let (m, l) = r
            .report
            .bland_altman
            .as_ref()
            .map(|b| (format!("{:.2}", b.mod_), format!("{:.2}", b.loa)))
            .unwrap_or(("n.a.".into(), "n.a.".into()));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            r.model,
            r.depth,
            r.input,
            r.fs,
            r.report.mae_ci_text(),
            m,
            l
        );
    }
    out
}
