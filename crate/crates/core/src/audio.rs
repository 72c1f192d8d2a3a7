//! Audio ingestion: WAV decoding, segmentation, plain decimation and channel mixing.
//!
//! Channel index 0 is "channel 1" (mid-nostril microphone), index 1 is
//! "channel 2" (near the left nostril).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sample rates accepted by the detection pipelines (44100 Hz source and its
/// decimations by 10, 21, 42 and 90).
pub const SUPPORTED_RATES: [f64; 5] = [44100.0, 4410.0, 2100.0, 1050.0, 490.0];

/// Rates a detector may be trained or evaluated at.
pub const DETECTION_RATES: [f64; 4] = [4410.0, 2100.0, 1050.0, 490.0];

pub(crate) fn rates_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Metadata attached to an audio segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentMeta {
    pub segment_kind: String,
    /// km/h
    pub average_speed: Option<f64>,
    pub horse_id: String,
}

impl SegmentMeta {
    pub fn new(horse_id: impl Into<String>, segment_kind: impl Into<String>) -> Self {
        SegmentMeta {
            segment_kind: segment_kind.into(),
            average_speed: None,
            horse_id: horse_id.into(),
        }
    }

    /// Parses a `key=value` sidecar. Recognised keys: `horse_id`, `segment`
    /// (or `segment_kind`), `average_speed`. Blank lines and `#` comments are skipped.
    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut meta = SegmentMeta::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: no + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            let value = value.trim();
            match key.trim() {
                "horse_id" => meta.horse_id = value.to_string(),
                "segment" | "segment_kind" => meta.segment_kind = value.to_string(),
                "average_speed" => {
                    meta.average_speed = Some(value.parse().map_err(|_| Error::Parse {
                        line: no + 1,
                        reason: format!("bad average_speed {value:?}"),
                    })?)
                }
                other => {
                    return Err(Error::Parse {
                        line: no + 1,
                        reason: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if meta.horse_id.is_empty() {
            return Err(Error::Validation("sidecar lacks horse_id".into()));
        }
        Ok(meta)
    }
}

/// Microphone channel selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSel {
    C1,
    C2,
    Both,
}

impl ChannelSel {
    pub fn input_channels(self) -> usize {
        match self {
            ChannelSel::Both => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ChannelSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelSel::C1 => "c1",
            ChannelSel::C2 => "c2",
            ChannelSel::Both => "both",
        })
    }
}

impl FromStr for ChannelSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c1" => Ok(ChannelSel::C1),
            "c2" => Ok(ChannelSel::C2),
            "both" => Ok(ChannelSel::Both),
            _ => Err(Error::arg("channel", format!("expected c1|c2|both, got {s:?}"))),
        }
    }
}

/// A multi-channel block of audio with its rate and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    channels: Vec<Vec<f64>>,
    sample_rate: f64,
    /// Seconds relative to the recording origin.
    pub start_time: f64,
    pub meta: SegmentMeta,
}

impl AudioSegment {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64, meta: SegmentMeta) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::arg(
                "channels",
                format!("expected 1 or 2 channels, got {}", channels.len()),
            ));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::arg("sample_rate", format!("{sample_rate} is not positive")));
        }
        Ok(AudioSegment {
            channels,
            sample_rate,
            start_time: 0.0,
            meta,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::new(vec![samples], sample_rate, SegmentMeta::default())
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Channels fed to a detector for the given selection, in channel order.
    pub fn select(&self, sel: ChannelSel) -> Result<Vec<&[f64]>> {
        let need = match sel {
            ChannelSel::C1 => 1,
            ChannelSel::C2 | ChannelSel::Both => 2,
        };
        if self.num_channels() < need {
            return Err(Error::Shape(format!(
                "selection {sel} needs {need} channels, segment has {}",
                self.num_channels()
            )));
        }
        Ok(match sel {
            ChannelSel::C1 => vec![self.channel(0)],
            ChannelSel::C2 => vec![self.channel(1)],
            ChannelSel::Both => vec![self.channel(0), self.channel(1)],
        })
    }

    /// The single analysis channel for a selection: the chosen channel, or the
    /// sample-wise mean of both.
    pub fn analysis_signal(&self, sel: ChannelSel) -> Result<Vec<f64>> {
        match sel {
            ChannelSel::Both => Ok(mix_channels(self)?.channels.swap_remove(0)),
            _ => Ok(self.select(sel)?[0].to_vec()),
        }
    }
}

/// Loads a PCM WAV file (16-bit integer or 32-bit float, mono or stereo).
///
/// Integer samples are divided by 2^(bits-1), so -32768 maps to -1.0. The file
/// rate must equal `expected_rate`; nothing is resampled here.
pub fn load_wav(path: impl AsRef<Path>, expected_rate: f64) -> Result<AudioSegment> {
    read_wav(path.as_ref(), Some(expected_rate))
}

/// Loads a WAV file at whatever rate it was recorded.
pub fn load_wav_native(path: impl AsRef<Path>) -> Result<AudioSegment> {
    read_wav(path.as_ref(), None)
}

/// Loads a WAV file and decimates it to `target_rate`, which must equal the
/// file rate or divide it exactly.
pub fn load_wav_at(path: impl AsRef<Path>, target_rate: f64) -> Result<AudioSegment> {
    downsample_to(&load_wav_native(path)?, target_rate)
}

fn read_wav(path: &Path, expected_rate: Option<f64>) -> Result<AudioSegment> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if !(1..=2).contains(&nch) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{nch} channels, expected 1 or 2"),
        });
    }
    let rate = spec.sample_rate as f64;
    if let Some(expected) = expected_rate.filter(|&e| !rates_equal(rate, e)) {
        return Err(Error::RateMismatch { expected, found: rate });
    }
    let format_err = |e: hound::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let scale = 1.0 / 32768.0;
            reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(format_err)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(format_err)?,
        (fmt, bits) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported sample format {fmt:?} with {bits} bits"),
            })
        }
    };
    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    AudioSegment::new(channels, rate, SegmentMeta::default())
}

/// Writes a segment as 16-bit PCM. Amplitudes are clamped to the
/// representable range.
pub fn write_wav(seg: &AudioSegment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rate = seg.sample_rate.round();
    if !rates_equal(rate, seg.sample_rate) {
        return Err(Error::arg("sample_rate", "WAV requires an integer rate"));
    }
    let spec = hound::WavSpec {
        channels: seg.num_channels() as u16,
        sample_rate: rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for i in 0..seg.len() {
        for ch in &seg.channels {
            let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(wrap)?;
        }
    }
    writer.finalize().map_err(wrap)
}

/// Sample-aligned slice `[start, stop)` in seconds relative to the segment start.
pub fn extract_segment(seg: &AudioSegment, start: f64, stop: f64) -> Result<AudioSegment> {
    let dur = seg.duration();
    let half = 0.5 / seg.sample_rate;
    if !(start >= 0.0 && start < stop && stop <= dur + half) {
        return Err(Error::Range(format!(
            "[{start}, {stop}] not within [0, {dur}] with start < stop"
        )));
    }
    let i0 = (start * seg.sample_rate).round() as usize;
    let i1 = ((stop * seg.sample_rate).round() as usize).min(seg.len());
    if i0 >= i1 {
        return Err(Error::Range(format!("[{start}, {stop}] selects no samples")));
    }
    Ok(AudioSegment {
        channels: seg.channels.iter().map(|c| c[i0..i1].to_vec()).collect(),
        sample_rate: seg.sample_rate,
        start_time: seg.start_time + i0 as f64 / seg.sample_rate,
        meta: seg.meta.clone(),
    })
}

/// Keep-every-Nth decimation with zero offset and no anti-alias filter.
pub fn downsample(seg: &AudioSegment, factor: usize) -> Result<AudioSegment> {
    if factor == 0 {
        return Err(Error::arg("factor", "must be at least 1"));
    }
    Ok(AudioSegment {
        channels: seg
            .channels
            .iter()
            .map(|c| c.iter().step_by(factor).copied().collect())
            .collect(),
        sample_rate: seg.sample_rate / factor as f64,
        start_time: seg.start_time,
        meta: seg.meta.clone(),
    })
}

/// Decimates to `target_rate`, which must divide the segment rate exactly.
pub fn downsample_to(seg: &AudioSegment, target_rate: f64) -> Result<AudioSegment> {
    if rates_equal(seg.sample_rate, target_rate) {
        return Ok(seg.clone());
    }
    let ratio = seg.sample_rate / target_rate;
    let factor = ratio.round();
    if factor < 1.0 || !rates_equal(ratio, factor) {
        return Err(Error::UnsupportedRate(target_rate));
    }
    downsample(seg, factor as usize)
}

/// Sample-wise mean of the two channels.
pub fn mix_channels(seg: &AudioSegment) -> Result<AudioSegment> {
    if seg.num_channels() != 2 {
        return Err(Error::arg("seg", "mixing requires a stereo segment"));
    }
    let mixed = seg.channels[0]
        .iter()
        .zip(&seg.channels[1])
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(AudioSegment {
        channels: vec![mixed],
        sample_rate: seg.sample_rate,
        start_time: seg.start_time,
        meta: seg.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, rate: f64) -> AudioSegment {
        AudioSegment::mono((0..n).map(|i| i as f64).collect(), rate).unwrap()
    }

    #[test]
    fn downsample_index_arithmetic() {
        let s = ramp(10, 10.0);
        let d = downsample(&s, 3).unwrap();
        assert_eq!(d.channel(0), &[0.0, 3.0, 6.0, 9.0]);
        assert_eq!(downsample(&s, 1).unwrap(), s);
        assert!(downsample(&s, 0).is_err());
    }

    #[test]
    fn decimation_factors_from_44100_give_supported_rates() {
        let s = AudioSegment::mono(vec![0.0; 44100], 44100.0).unwrap();
        for (factor, rate) in [(10, 4410.0), (21, 2100.0), (42, 1050.0), (90, 490.0)] {
            let d = downsample(&s, factor).unwrap();
            assert_eq!(d.sample_rate(), rate);
            assert_eq!(downsample_to(&s, rate).unwrap().sample_rate(), rate);
        }
        assert!(downsample_to(&s, 1000.0).is_err());
    }

    #[test]
    fn extract_bounds() {
        let s = ramp(490 * 3, 490.0);
        assert_eq!(extract_segment(&s, 0.0, s.duration()).unwrap(), s);
        let e = extract_segment(&s, 1.0, 2.0).unwrap();
        assert_eq!(e.len(), 490);
        assert_eq!(e.start_time, 1.0);
        assert!(matches!(extract_segment(&s, 2.0, 1.0), Err(Error::Range(_))));
        assert!(matches!(extract_segment(&s, 0.0, 4.0), Err(Error::Range(_))));
    }

    #[test]
    fn mixing() {
        let seg = |a: Vec<f64>, b: Vec<f64>| AudioSegment::new(vec![a, b], 10.0, SegmentMeta::default()).unwrap();
        let m = mix_channels(&seg(vec![1.0, 1.0], vec![-1.0, -1.0])).unwrap();
        assert_eq!(m.channel(0), &[0.0, 0.0]);
        let m = mix_channels(&seg(vec![0.2], vec![0.4])).unwrap();
        assert!((m.channel(0)[0] - 0.3).abs() < 1e-15);
        let m = mix_channels(&seg(vec![0.1, -0.7], vec![0.1, -0.7])).unwrap();
        assert_eq!(m.channel(0), &[0.1, -0.7]);
        assert!(mix_channels(&ramp(3, 10.0)).is_err());
    }

    #[test]
    fn unequal_channels_rejected() {
        let r = AudioSegment::new(vec![vec![0.0; 3], vec![0.0; 2]], 10.0, SegmentMeta::default());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn sidecar() {
        let m = SegmentMeta::parse_sidecar("horse_id=H3\nsegment=high-speed\naverage_speed=41.5\n").unwrap();
        assert_eq!(m.horse_id, "H3");
        assert_eq!(m.segment_kind, "high-speed");
        assert_eq!(m.average_speed, Some(41.5));
        assert!(SegmentMeta::parse_sidecar("segment=trot-1").is_err());
    }
}
