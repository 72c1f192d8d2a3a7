//! Manual exhalation labels, per-sample label series, analysis windows and
//! windowed respiratory rates.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Where a set of events or rates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Reference,
    Tcn,
    Sp,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Reference => "reference",
            Provenance::Tcn => "tcn",
            Provenance::Sp => "sp",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Provenance::Reference),
            "tcn" => Ok(Provenance::Tcn),
            "sp" => Ok(Provenance::Sp),
            _ => Err(Error::arg("provenance", format!("unknown source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelInterval {
    pub start: f64,
    pub end: f64,
    pub tag: String,
}

impl LabelInterval {
    pub fn exhalation(start: f64, end: f64) -> Self {
        LabelInterval {
            start,
            end,
            tag: "E".into(),
        }
    }

    /// "E" or "exhalation", any case.
    pub fn is_exhalation(&self) -> bool {
        self.tag.eq_ignore_ascii_case("e") || self.tag.eq_ignore_ascii_case("exhalation")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTrack {
    pub intervals: Vec<LabelInterval>,
    pub horse_id: String,
}

impl LabelTrack {
    /// Sorts by start and checks `start < end` plus non-overlap of exhalations.
    pub fn new(mut intervals: Vec<LabelInterval>, horse_id: impl Into<String>) -> Result<Self> {
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        let track = LabelTrack {
            intervals,
            horse_id: horse_id.into(),
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        for iv in &self.intervals {
            if !(iv.start.is_finite() && iv.end.is_finite() && iv.start < iv.end) {
                return Err(Error::Validation(format!(
                    "interval [{}, {}] is not increasing",
                    iv.start, iv.end
                )));
            }
        }
        if self.intervals.windows(2).any(|w| w[0].start > w[1].start) {
            return Err(Error::Validation("intervals not sorted by start".into()));
        }
        let mut prev: Option<&LabelInterval> = None;
        for iv in self.exhalations() {
            if let Some(p) = prev {
                if iv.start < p.end {
                    return Err(Error::Validation(format!(
                        "exhalations [{}, {}] and [{}, {}] overlap",
                        p.start, p.end, iv.start, iv.end
                    )));
                }
            }
            prev = Some(iv);
        }
        Ok(())
    }

    pub fn exhalations(&self) -> impl Iterator<Item = &LabelInterval> {
        self.intervals.iter().filter(|iv| iv.is_exhalation())
    }

    /// Onset times of the exhalation intervals, ascending.
    pub fn event_times(&self) -> Vec<f64> {
        self.exhalations().map(|iv| iv.start).collect()
    }

    /// Builds a track of exhalation intervals from a per-sample 0/1 series.
    pub fn from_binary_series(series: &[u8], rate: f64, horse_id: &str) -> Result<Self> {
        let intervals = runs(series)
            .into_iter()
            .map(|(a, b)| LabelInterval::exhalation(a as f64 / rate, b as f64 / rate))
            .collect();
        LabelTrack::new(intervals, horse_id)
    }

    /// Audacity-compatible text, one `start<TAB>end<TAB>tag` line per label.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for iv in &self.intervals {
            let _ = writeln!(out, "{}\t{}\t{}", fmt_seconds(iv.start), fmt_seconds(iv.end), iv.tag);
        }
        out
    }
}

/// At least six decimals, more when needed for an exact round trip.
pub fn fmt_seconds(t: f64) -> String {
    let fixed = format!("{t:.6}");
    if fixed.parse::<f64>().ok() == Some(t) {
        fixed
    } else {
        format!("{t}")
    }
}

/// Parses label text. Lines beginning with `\` (Audacity spectral-selection
/// continuation lines) and blank lines are skipped.
pub fn parse_label_text(text: &str, horse_id: &str) -> Result<LabelTrack> {
    let mut intervals = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('\\') {
            continue;
        }
        let err = |reason: String| Error::Parse { line: no + 1, reason };
        let mut fields = line.split('\t');
        let mut time = |name: &str| -> Result<f64> {
            let f = fields.next().ok_or_else(|| err(format!("missing {name} field")))?;
            f.trim()
                .parse::<f64>()
                .map_err(|_| err(format!("bad {name} time {f:?}")))
        };
        let start = time("start")?;
        let end = time("end")?;
        let tag = fields.next().unwrap_or("").to_string();
        if fields.next().is_some() {
            return Err(err("more than three fields".into()));
        }
        intervals.push(LabelInterval { start, end, tag });
    }
    LabelTrack::new(intervals, horse_id)
}

pub fn parse_labels(path: impl AsRef<Path>) -> Result<LabelTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_label_text(&text, &id)
}

pub fn write_labels(track: &LabelTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, track.to_text()).map_err(|e| Error::io(path, e))
}

/// Per-sample series: sample `i` is 1 iff `i / rate` lies in `[start, end)` of
/// some exhalation.
pub fn to_binary_series(track: &LabelTrack, rate: f64, duration: f64) -> Result<Vec<u8>> {
    let n = (duration * rate).round() as usize;
    let mut out = vec![0u8; n];
    for iv in track.exhalations() {
        if iv.start < 0.0 || iv.end > duration + 0.5 / rate {
            return Err(Error::Validation(format!(
                "interval [{}, {}] exceeds duration {duration}",
                iv.start, iv.end
            )));
        }
        let a = (iv.start * rate).ceil() as usize;
        let b = ((iv.end * rate).ceil() as usize).min(n);
        for v in &mut out[a.min(b)..b] {
            *v = 1;
        }
    }
    Ok(out)
}

/// Maximal runs of nonzero values as half-open `[first, past_last)` index pairs.
pub fn runs(mask: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in mask.iter().enumerate() {
        match (v != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisWindow {
    pub index: usize,
    /// Seconds.
    pub start: f64,
    pub length: f64,
    pub hop: f64,
}

impl AnalysisWindow {
    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    /// Half-open membership `[start, start + length)`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Default analysis window: 10 s with 50 % overlap.
pub const WINDOW_LENGTH: f64 = 10.0;
pub const WINDOW_HOP: f64 = 5.0;

/// Window length and hop, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length: f64,
    pub hop: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: WINDOW_LENGTH,
            hop: WINDOW_HOP,
        }
    }
}

impl WindowSpec {
    pub fn grid(&self, duration: f64) -> Result<Vec<AnalysisWindow>> {
        windows(duration, self.length, self.hop)
    }
}

/// Windows starting at `k * hop` that fit entirely inside `duration`.
pub fn windows(duration: f64, length: f64, hop: f64) -> Result<Vec<AnalysisWindow>> {
    if !(hop > 0.0 && hop <= length) {
        return Err(Error::arg("hop", format!("need 0 < hop <= length, got {hop}")));
    }
    let eps = 1e-9 * duration.abs().max(1.0);
    let mut out = Vec::new();
    for k in 0.. {
        let start = k as f64 * hop;
        if start + length > duration + eps {
            break;
        }
        out.push(AnalysisWindow {
            index: k,
            start,
            length,
            hop,
        });
    }
    Ok(out)
}

/// Durations between consecutive event times.
pub fn cycle_durations(events: &[f64]) -> Vec<f64> {
    events.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Mean of the instantaneous rates `60 / T`, in breaths per minute.
pub fn rr_from_durations(durations: &[f64]) -> Option<f64> {
    if durations.is_empty() || durations.iter().any(|&t| !(t > 0.0)) {
        return None;
    }
    let n = durations.len() as f64;
    Some(60.0 / n * durations.iter().map(|t| 1.0 / t).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry {
    pub window: AnalysisWindow,
    pub rr: Option<f64>,
    pub n_cycles: usize,
}

impl RateEntry {
    /// Inside the 10-250 bpm sanity band (or absent).
    pub fn is_plausible(&self) -> bool {
        self.rr.is_none_or(|r| (10.0..=250.0).contains(&r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    pub entries: Vec<RateEntry>,
    pub source: Provenance,
}

impl RateSeries {
    /// Applies the windowed rate rule to ascending event times: events whose
    /// time falls in a window are paired only with each other.
    pub fn from_events(events: &[f64], windows: &[AnalysisWindow], source: Provenance) -> Self {
        let entries = windows
            .iter()
            .map(|w| {
                let inside: Vec<f64> = events.iter().copied().filter(|&t| w.contains(t)).collect();
                rate_entry(*w, &inside)
            })
            .collect();
        RateSeries { entries, source }
    }

    pub fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.entries.iter().map(|e| e.rr)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,window_end,rr_bpm,n_cycles,source\n");
        for e in &self.entries {
            let rr = e.rr.map(|r| format!("{r:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.window.start,
                e.window.end(),
                rr,
                e.n_cycles,
                self.source
            );
        }
        out
    }
}

pub(crate) fn rate_entry(window: AnalysisWindow, inside: &[f64]) -> RateEntry {
    let t = cycle_durations(inside);
    RateEntry {
        window,
        rr: rr_from_durations(&t),
        n_cycles: t.len(),
    }
}

/// Reference rates from manual labels: exhalation onsets are the events.
pub fn reference_rates(track: &LabelTrack, windows: &[AnalysisWindow]) -> RateSeries {
    RateSeries::from_events(&track.event_times(), windows, Provenance::Reference)
}
