//! Forward and reverse passes over the flat parameter vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    apply_channel_mask, layer_norm_backward, layer_norm_forward, pointwise, pointwise_backward, LnCache,
};
use super::{TcnModel, CLASSES};

struct BlockCache {
    input: Vec<f64>,
    ln1: LnCache,
    mask1: Vec<f64>,
    /// Second convolution input.
    a1: Vec<f64>,
    ln2: LnCache,
    /// Normalized second convolution output, before ReLU.
    v2: Vec<f64>,
    mask2: Vec<f64>,
}

#[derive(Default)]
pub(super) struct Cache {
    blocks: Vec<BlockCache>,
    last: Vec<f64>,
}

fn draw_mask(c: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    match rng {
        Some(rng) if p > 0.0 => (0..c)
            .map(|_| if rng.random_bool(p) { 0.0 } else { 1.0 / (1.0 - p) })
            .collect(),
        _ => vec![1.0; c],
    }
}

/// Softmax probabilities `[classes x t]`. Passing a generator enables
/// dropout; passing a cache keeps what the backward pass needs.
pub(super) fn forward(
    model: &TcnModel,
    x: &[f64],
    t: usize,
    mut rng: Option<&mut ChaCha8Rng>,
    mut cache: Option<&mut Cache>,
) -> Vec<f64> {
    let cfg = model.config();
    let lay = model.layout();
    let p = model.params();
    let c = cfg.channels;
    let mut h = x.to_vec();
    for (b, off) in lay.blocks.iter().enumerate() {
        let (conv1, conv2) = cfg.convs(b);
        let keep = cache.is_some();
        let mut u = vec![0.0; c * t];
        conv1.forward(&h, t, &p[off.w1..off.b1], &p[off.b1..off.b1 + c], &mut u);
        let mut ln1 = LnCache::default();
        let mut a1 = vec![0.0; c * t];
        layer_norm_forward(
            &u,
            c,
            t,
            &p[off.g1..off.g1 + c],
            &p[off.be1..off.be1 + c],
            &mut a1,
            keep.then_some(&mut ln1),
        );
        let mask1 = draw_mask(c, cfg.dropout, rng.as_deref_mut());
        apply_channel_mask(&mut a1, t, &mask1);
        conv2.forward(&a1, t, &p[off.w2..off.b2], &p[off.b2..off.b2 + c], &mut u);
        let mut ln2 = LnCache::default();
        let mut v2 = vec![0.0; c * t];
        layer_norm_forward(
            &u,
            c,
            t,
            &p[off.g2..off.g2 + c],
            &p[off.be2..off.be2 + c],
            &mut v2,
            keep.then_some(&mut ln2),
        );
        let mask2 = draw_mask(c, cfg.dropout, rng.as_deref_mut());
        // out = dropout(relu(v2)) + residual
        let mut out = match off.proj {
            Some((pw, pb)) => {
                let mut r = vec![0.0; c * t];
                pointwise(&h, conv1.cin, t, &p[pw..pb], &p[pb..pb + c], c, &mut r);
                r
            }
            None => h.clone(),
        };
        for ((o, v), m) in out.chunks_exact_mut(t).zip(v2.chunks_exact(t)).zip(&mask2) {
            for (oj, vj) in o.iter_mut().zip(v) {
                *oj += vj.max(0.0) * m;
            }
        }
        if let Some(cache) = cache.as_deref_mut() {
            cache.blocks.push(BlockCache {
                input: std::mem::take(&mut h),
                ln1,
                mask1,
                a1,
                ln2,
                v2,
                mask2,
            });
        }
        h = out;
    }
    let mut logits = vec![0.0; CLASSES * t];
    pointwise(
        &h,
        c,
        t,
        &p[lay.head_w..lay.head_b],
        &p[lay.head_b..lay.head_b + CLASSES],
        CLASSES,
        &mut logits,
    );
    if let Some(cache) = cache {
        cache.last = h;
    }
    softmax_columns(&mut logits, t);
    logits
}

fn softmax_columns(z: &mut [f64], t: usize) {
    let (a, b) = z.split_at_mut(t);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let m = x.max(*y);
        let ex = (*x - m).exp();
        let ey = (*y - m).exp();
        let s = ex + ey;
        *x = ex / s;
        *y = ey / s;
    }
}

/// Sum over samples of the (optionally class-weighted) cross-entropy.
/// Gradients of `scale * sum` are added into `grads`.
#[allow(clippy::too_many_arguments)]
pub(super) fn loss_and_grad(
    model: &TcnModel,
    x: &[f64],
    t: usize,
    labels: &[u8],
    rng: Option<&mut ChaCha8Rng>,
    class_weights: Option<[f64; 2]>,
    scale: f64,
    grads: &mut [f64],
) -> f64 {
    let mut cache = Cache::default();
    let probs = forward(model, x, t, rng, Some(&mut cache));
    let weights = class_weights.unwrap_or([1.0, 1.0]);
    let mut loss = 0.0;
    // d(loss)/d(logit_c) = w_y (p_c - [c == y])
    let mut dlogits = probs.clone();
    for (j, &y) in labels.iter().enumerate() {
        let y = y as usize;
        let w = weights[y];
        let py = probs[y * t + j];
        loss += -w * py.max(f64::MIN_POSITIVE).ln();
        dlogits[y * t + j] -= 1.0;
        dlogits[j] *= w * scale;
        dlogits[t + j] *= w * scale;
    }
    backward(model, &cache, t, &dlogits, grads);
    loss
}

fn backward(model: &TcnModel, cache: &Cache, t: usize, dlogits: &[f64], grads: &mut [f64]) {
    let cfg = model.config();
    let lay = model.layout();
    let p = model.params();
    let c = cfg.channels;
    let mut dh = vec![0.0; c * t];
    {
        let (gw, gb) = grads[lay.head_w..].split_at_mut(lay.head_b - lay.head_w);
        pointwise_backward(
            &cache.last,
            c,
            t,
            &p[lay.head_w..lay.head_b],
            CLASSES,
            dlogits,
            gw,
            &mut gb[..CLASSES],
            Some(&mut dh),
        );
    }
    for (b, off) in lay.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[b];
        let (conv1, conv2) = cfg.convs(b);
        let mut din = vec![0.0; conv1.cin * t];
        // residual path
        match off.proj {
            Some((pw, pb)) => {
                let (gw, gb) = grads[pw..].split_at_mut(pb - pw);
                pointwise_backward(
                    &bc.input,
                    conv1.cin,
                    t,
                    &p[pw..pb],
                    c,
                    &dh,
                    gw,
                    &mut gb[..c],
                    Some(&mut din),
                );
            }
            None => din.copy_from_slice(&dh),
        }
        // through dropout and ReLU
        let mut dv = dh;
        for ((d, v), m) in dv.chunks_exact_mut(t).zip(bc.v2.chunks_exact(t)).zip(&bc.mask2) {
            for (dj, vj) in d.iter_mut().zip(v) {
                *dj = if *vj > 0.0 { *dj * m } else { 0.0 };
            }
        }
        {
            let (gg, gbe) = grads[off.g2..].split_at_mut(off.be2 - off.g2);
            layer_norm_backward(
                &mut dv,
                c,
                t,
                &p[off.g2..off.g2 + c],
                &bc.ln2,
                &mut gg[..c],
                &mut gbe[..c],
            );
        }
        let mut da = vec![0.0; c * t];
        {
            let (gw, gb) = grads[off.w2..].split_at_mut(off.b2 - off.w2);
            conv2.backward(&bc.a1, t, &p[off.w2..off.b2], &dv, gw, &mut gb[..c], Some(&mut da));
        }
        apply_channel_mask(&mut da, t, &bc.mask1);
        {
            let (gg, gbe) = grads[off.g1..].split_at_mut(off.be1 - off.g1);
            layer_norm_backward(
                &mut da,
                c,
                t,
                &p[off.g1..off.g1 + c],
                &bc.ln1,
                &mut gg[..c],
                &mut gbe[..c],
            );
        }
        {
            let (gw, gb) = grads[off.w1..].split_at_mut(off.b1 - off.w1);
            conv1.backward(&bc.input, t, &p[off.w1..off.b1], &da, gw, &mut gb[..c], Some(&mut din));
        }
        dh = din;
    }
}
