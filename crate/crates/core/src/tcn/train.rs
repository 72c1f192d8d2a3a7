//! Minibatch training with Adam and validation-based early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_labels, net, TcnModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub minibatch: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a strictly lower validation loss before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Training sequence length, seconds.
    pub chunk_seconds: f64,
    /// Per-class loss weights; `None` is plain cross-entropy.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            minibatch: 8,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            chunk_seconds: 2.0,
            class_weights: None,
        }
    }
}

/// A normalized input with its per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSequence {
    pub input: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabelledSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cuts sequences into consecutive pieces of `chunk_len` samples; a shorter
/// remainder is kept as its own piece.
pub fn chunk_sequences(seqs: &[LabelledSequence], chunk_len: usize) -> Vec<LabelledSequence> {
    let chunk_len = chunk_len.max(1);
    let mut out = Vec::new();
    for s in seqs {
        let mut start = 0;
        while start < s.len() {
            let end = (start + chunk_len).min(s.len());
            out.push(LabelledSequence {
                input: s.input.iter().map(|c| c[start..end].to_vec()).collect(),
                labels: s.labels[start..end].to_vec(),
            });
            start = end;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, spec: &TrainSpec) -> Self {
        Adam {
            lr: spec.learning_rate,
            beta1: spec.beta1,
            beta2: spec.beta2,
            epsilon: spec.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.8},{:.8}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

fn check_set(name: &'static str, set: &[LabelledSequence], input_channels: usize) -> Result<()> {
    if set.is_empty() || set.iter().all(|s| s.is_empty()) {
        return Err(Error::arg(name, "no training data"));
    }
    for s in set {
        if s.input.len() != input_channels || s.input.iter().any(|c| c.len() != s.len()) {
            return Err(Error::Shape(format!(
                "{name}: input must have {input_channels} channels of {} samples",
                s.len()
            )));
        }
        check_labels(&s.labels, s.len())?;
    }
    Ok(())
}

/// Mean per-sample loss of `model` over a set, without dropout.
pub(crate) fn mean_loss(model: &TcnModel, set: &[LabelledSequence], weights: Option<[f64; 2]>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in set.iter().filter(|s| !s.is_empty()) {
        let flat = s.input.concat();
        let probs = net::forward(model, &flat, s.len(), None, None);
        let w = weights.unwrap_or([1.0, 1.0]);
        let t = s.len();
        for (j, &y) in s.labels.iter().enumerate() {
            total -= w[y as usize] * probs[y as usize * t + j].max(f64::MIN_POSITIVE).ln();
        }
        n += t;
    }
    total / n as f64
}

/// Trains a copy of `model` and returns the snapshot with the lowest
/// validation loss.
pub fn train(
    model: &TcnModel,
    train_set: &[LabelledSequence],
    val_set: &[LabelledSequence],
    spec: &TrainSpec,
    rate: f64,
    seed: u64,
) -> Result<(TcnModel, TrainingLog)> {
    train_with(model, train_set, val_set, spec, rate, seed, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    model: &TcnModel,
    train_set: &[LabelledSequence],
    val_set: &[LabelledSequence],
    spec: &TrainSpec,
    rate: f64,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(TcnModel, TrainingLog)> {
    let ch = model.config().input_channels;
    check_set("train_set", train_set, ch)?;
    check_set("val_set", val_set, ch)?;
    if spec.minibatch == 0 || spec.max_epochs == 0 {
        return Err(Error::Validation("minibatch and max_epochs must be positive".into()));
    }
    if !(rate > 0.0 && spec.chunk_seconds > 0.0) {
        return Err(Error::arg("chunk_seconds", "chunk length must be positive"));
    }
    let chunk_len = (spec.chunk_seconds * rate).round() as usize;
    let chunks = chunk_sequences(train_set, chunk_len);
    let val_chunks = chunk_sequences(val_set, chunk_len);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = model.clone();
    let mut adam = Adam::new(current.num_params(), spec);
    let mut best = (f64::INFINITY, current.clone(), 0usize);
    let mut log = TrainingLog::default();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut grads = vec![0.0; current.num_params()];
    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for batch in order.chunks(spec.minibatch) {
            let n: usize = batch.iter().map(|&i| chunks[i].len()).sum();
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let c = &chunks[i];
                let flat = c.input.concat();
                epoch_loss += net::loss_and_grad(
                    &current,
                    &flat,
                    c.len(),
                    &c.labels,
                    Some(&mut rng),
                    spec.class_weights,
                    1.0 / n as f64,
                    &mut grads,
                );
            }
            epoch_samples += n;
            adam.update(current.params_mut(), &grads);
        }
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_samples as f64,
            val_loss: mean_loss(&current, &val_chunks, spec.class_weights),
        };
        on_epoch(&entry);
        log.epochs.push(entry);
        if entry.val_loss < best.0 {
            best = (entry.val_loss, current.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}
