//! Temporal convolutional network for per-sample exhalation labelling.
//!
//! Each residual block runs: dilated convolution, normalization, spatial
//! dropout, dilated convolution, normalization, ReLU, spatial dropout, then
//! adds the block input (through a 1x1 projection when the channel count
//! changes). A pointwise head produces two logits per sample.

mod io;
pub mod layers;
mod net;
mod train;

pub use io::{load_model, save_model, MAGIC};
pub use train::{chunk_sequences, train, train_with, Adam, EpochLog, LabelledSequence, TrainSpec, TrainingLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::ChannelSel;
use crate::error::{Error, Result};
use layers::Conv;

/// Block counts offered for the detector.
pub const DEPTHS: [usize; 3] = [4, 8, 12];

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub depth: usize,
    pub channels: usize,
    pub kernel_size: usize,
    /// One dilation per block.
    pub dilations: Vec<usize>,
    pub dropout: f64,
    pub input_channels: usize,
    /// Convolutions look only backwards in time when set.
    pub causal: bool,
}

impl TcnConfig {
    /// Defaults: 32 channels, kernel 5, dropout 0.1, dilations doubling from 1
    /// up to 64 and staying at 64 for deeper blocks.
    pub fn new(depth: usize, input_channels: usize) -> Self {
        TcnConfig {
            depth,
            channels: 32,
            kernel_size: 5,
            dilations: Self::default_dilations(depth),
            dropout: 0.1,
            input_channels,
            causal: false,
        }
    }

    pub fn default_dilations(depth: usize) -> Vec<usize> {
        (0..depth).map(|b| 1usize << b.min(6)).collect()
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.dilations.len() != self.depth {
            return bad(format!("{} dilations for {} blocks", self.dilations.len(), self.depth));
        }
        if self.dilations.contains(&0) || self.dilations.windows(2).any(|w| w[1] < w[0]) {
            return bad("dilations must be positive and nondecreasing".into());
        }
        if self.channels == 0 || self.kernel_size == 0 {
            return bad("channels and kernel size must be positive".into());
        }
        if !(1..=2).contains(&self.input_channels) {
            return bad(format!("{} input channels; expected 1 or 2", self.input_channels));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn convs(&self, block: usize) -> (Conv, Conv) {
        let cin = if block == 0 { self.input_channels } else { self.channels };
        let conv = |cin| Conv {
            cin,
            cout: self.channels,
            kernel: self.kernel_size,
            dilation: self.dilations[block],
            causal: self.causal,
        };
        (conv(cin), conv(self.channels))
    }

    /// Largest distance, in samples, between an input sample and an output
    /// it can influence: each block stacks two convolutions of reach
    /// `(kernel - 1) / 2 * dilation` (centered), or `(kernel - 1) * dilation`
    /// backwards when causal.
    pub fn receptive_radius(&self) -> usize {
        let per_conv = if self.causal {
            self.kernel_size - 1
        } else {
            (self.kernel_size - 1) / 2
        };
        self.dilations.iter().map(|d| 2 * per_conv * d).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockOffsets {
    pub w1: usize,
    pub b1: usize,
    pub g1: usize,
    pub be1: usize,
    pub w2: usize,
    pub b2: usize,
    pub g2: usize,
    pub be2: usize,
    pub proj: Option<(usize, usize)>,
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub blocks: Vec<BlockOffsets>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &TcnConfig) -> Self {
        let mut tensors: Vec<TensorSpec> = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec { name, shape, offset });
            offset
        };
        let c = cfg.channels;
        let k = cfg.kernel_size;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for b in 0..cfg.depth {
            let cin = cfg.convs(b).0.cin;
            let w1 = push(format!("block{b}.conv1.weight"), vec![c, cin, k]);
            let b1 = push(format!("block{b}.conv1.bias"), vec![c]);
            let g1 = push(format!("block{b}.norm1.scale"), vec![c]);
            let be1 = push(format!("block{b}.norm1.shift"), vec![c]);
            let w2 = push(format!("block{b}.conv2.weight"), vec![c, c, k]);
            let b2 = push(format!("block{b}.conv2.bias"), vec![c]);
            let g2 = push(format!("block{b}.norm2.scale"), vec![c]);
            let be2 = push(format!("block{b}.norm2.shift"), vec![c]);
            let proj = (cin != c).then(|| {
                let w = push(format!("block{b}.proj.weight"), vec![c, cin]);
                let bias = push(format!("block{b}.proj.bias"), vec![c]);
                (w, bias)
            });
            blocks.push(BlockOffsets {
                w1,
                b1,
                g1,
                be1,
                w2,
                b2,
                g2,
                be2,
                proj,
            });
        }
        let head_w = push("head.weight".into(), vec![CLASSES, c]);
        let head_b = push("head.bias".into(), vec![CLASSES]);
        Layout {
            tensors,
            blocks,
            head_w,
            head_b,
            total,
        }
    }
}

/// Provenance carried with a trained model so detection can check its input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelInfo {
    pub sample_rate: Option<f64>,
    pub channel: Option<ChannelSel>,
    /// Calibrated variance-gate threshold for postprocessing.
    pub gate_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    config: TcnConfig,
    layout: Layout,
    params: Vec<f64>,
    pub rng_seed: u64,
    pub info: ModelInfo,
}

impl TcnModel {
    /// Random initialization: convolution and projection weights from a
    /// normal with variance `2 / fan_in`, head weights with `1 / fan_in`,
    /// biases and shifts zero, scales one.
    pub fn new(config: TcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for t in &layout.tensors {
            let r = t.range();
            let name = t.name.as_str();
            if name.ends_with(".scale") {
                params[r].fill(1.0);
            } else if name.ends_with(".weight") {
                let fan_in: usize = t.shape[1..].iter().product();
                let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
                let sd = (gain / fan_in as f64).sqrt();
                for p in &mut params[r] {
                    *p = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(TcnModel {
            config,
            layout,
            params,
            rng_seed: seed,
            info: ModelInfo::default(),
        })
    }

    pub(crate) fn from_parts(config: TcnConfig, params: Vec<f64>, rng_seed: u64, info: ModelInfo) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Model(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        Ok(TcnModel {
            config,
            layout,
            params,
            rng_seed,
            info,
        })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(name, shape, values)` for every tensor in storage order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.layout
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice(), &self.params[t.range()]))
    }

    fn flatten(&self, x: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
        if x.len() != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels,
                x.len()
            )));
        }
        let t = x[0].len();
        if t == 0 || x.iter().any(|c| c.len() != t) {
            return Err(Error::Shape("input channels must be non-empty and equal length".into()));
        }
        Ok((x.concat(), t))
    }

    /// Per-sample class probabilities `[p(no exhalation), p(exhalation)]`.
    /// With `training` set, spatial dropout is drawn from a generator seeded
    /// by `rng_seed`.
    pub fn forward(&self, x: &[Vec<f64>], training: bool) -> Result<Vec<[f64; 2]>> {
        let (flat, t) = self.flatten(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let probs = net::forward(self, &flat, t, training.then_some(&mut rng), None);
        Ok(to_rows(&probs, t))
    }

    /// Mean per-sample cross-entropy and its gradient with dropout disabled.
    pub fn loss_and_gradients(&self, x: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_gradients_inner(x, labels, None)
    }

    /// As [`loss_and_gradients`](Self::loss_and_gradients) with dropout masks
    /// drawn from `dropout_seed`, so repeated calls see the same masks.
    pub fn loss_and_gradients_with_dropout(
        &self,
        x: &[Vec<f64>],
        labels: &[u8],
        dropout_seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_gradients_inner(x, labels, Some(dropout_seed))
    }

    fn loss_and_gradients_inner(
        &self,
        x: &[Vec<f64>],
        labels: &[u8],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>)> {
        let (flat, t) = self.flatten(x)?;
        check_labels(labels, t)?;
        let mut grads = vec![0.0; self.params.len()];
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let sum = net::loss_and_grad(self, &flat, t, labels, rng.as_mut(), None, 1.0 / t as f64, &mut grads);
        Ok((sum / t as f64, grads))
    }

    /// Rescales the raw input and returns the per-sample argmax class.
    pub fn predict_labels(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        let probs = self.forward(&rescale_symmetric(x), false)?;
        Ok(predict_from_probs(&probs))
    }
}

pub(crate) fn check_labels(labels: &[u8], t: usize) -> Result<()> {
    if labels.len() != t {
        return Err(Error::Shape(format!("{} labels for {t} samples", labels.len())));
    }
    if let Some(v) = labels.iter().find(|&&v| v > 1) {
        return Err(Error::arg("labels", format!("class {v} is not 0 or 1")));
    }
    Ok(())
}

fn to_rows(probs: &[f64], t: usize) -> Vec<[f64; 2]> {
    (0..t).map(|j| [probs[j], probs[t + j]]).collect()
}

/// Argmax per sample; ties go to class 0.
pub fn predict_from_probs(probs: &[[f64; 2]]) -> Vec<u8> {
    probs.iter().map(|p| u8::from(p[1] > p[0])).collect()
}

/// Scales each channel by its maximum magnitude so it spans `[-1, 1]`;
/// all-zero channels stay zero.
pub fn rescale_symmetric(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|c| {
            let m = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0.0 {
                c.iter().map(|v| v / m).collect()
            } else {
                c.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
