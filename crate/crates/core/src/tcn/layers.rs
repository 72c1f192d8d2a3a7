//! Layer kernels on row-major `[channels x time]` buffers.

use matrixmultiply::dgemm;

/// Time steps per im2col tile; bounds the scratch matrix to
/// `cin * kernel * TILE` values.
const TILE: usize = 1024;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub causal: bool,
}

impl Conv {
    /// Input offset read by tap `k`.
    fn offset(&self, k: usize) -> isize {
        let d = self.dilation as isize;
        if self.causal {
            -((self.kernel - 1 - k) as isize) * d
        } else {
            (k as isize - (self.kernel / 2) as isize) * d
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel
    }

    /// Samples on each side that can reach an output (the causal case only
    /// reaches backwards).
    pub fn reach(&self) -> usize {
        (self.kernel - 1) / 2 * self.dilation
    }

    fn im2col(&self, x: &[f64], t: usize, start: usize, n: usize, col: &mut [f64]) {
        for ci in 0..self.cin {
            let row_in = &x[ci * t..(ci + 1) * t];
            for k in 0..self.kernel {
                let off = self.offset(k);
                let dst = &mut col[(ci * self.kernel + k) * n..(ci * self.kernel + k + 1) * n];
                for (j, d) in dst.iter_mut().enumerate() {
                    let src = (start + j) as isize + off;
                    *d = if src >= 0 && (src as usize) < t {
                        row_in[src as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    /// `y = W * x + b`, length preserved with zero padding.
    pub fn forward(&self, x: &[f64], t: usize, w: &[f64], b: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cin * t);
        debug_assert_eq!(y.len(), self.cout * t);
        let rows = self.cin * self.kernel;
        let mut col = vec![0.0; rows * TILE.min(t)];
        let mut start = 0;
        while start < t {
            let n = TILE.min(t - start);
            self.im2col(x, t, start, n, &mut col);
            // SAFETY: all pointers index into live slices with the strides
            // given; dimensions match the buffers checked above.
            unsafe {
                dgemm(
                    self.cout,
                    rows,
                    n,
                    1.0,
                    w.as_ptr(),
                    rows as isize,
                    1,
                    col.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    y.as_mut_ptr().add(start),
                    t as isize,
                    1,
                );
            }
            start += n;
        }
        for (co, row) in y.chunks_exact_mut(t).enumerate() {
            let bias = b[co];
            row.iter_mut().for_each(|v| *v += bias);
        }
    }

    /// Accumulates `dw`, `db` and, when given, `dx` from the output gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        t: usize,
        w: &[f64],
        dy: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        let rows = self.cin * self.kernel;
        let cap = TILE.min(t);
        let mut col = vec![0.0; rows * cap];
        let mut dcol = vec![0.0; rows * cap];
        let mut start = 0;
        while start < t {
            let n = TILE.min(t - start);
            self.im2col(x, t, start, n, &mut col);
            // SAFETY: as in `forward`; `dy` tiles are read with row stride `t`.
            unsafe {
                dgemm(
                    self.cout,
                    n,
                    rows,
                    1.0,
                    dy.as_ptr().add(start),
                    t as isize,
                    1,
                    col.as_ptr(),
                    1,
                    n as isize,
                    1.0,
                    dw.as_mut_ptr(),
                    rows as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                unsafe {
                    dgemm(
                        rows,
                        self.cout,
                        n,
                        1.0,
                        w.as_ptr(),
                        1,
                        rows as isize,
                        dy.as_ptr().add(start),
                        t as isize,
                        1,
                        0.0,
                        dcol.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                for ci in 0..self.cin {
                    for k in 0..self.kernel {
                        let off = self.offset(k);
                        let src = &dcol[(ci * self.kernel + k) * n..(ci * self.kernel + k + 1) * n];
                        let row = &mut dx[ci * t..(ci + 1) * t];
                        for (j, g) in src.iter().enumerate() {
                            let p = (start + j) as isize + off;
                            if p >= 0 && (p as usize) < t {
                                row[p as usize] += g;
                            }
                        }
                    }
                }
            }
            start += n;
        }
        for (co, row) in dy.chunks_exact(t).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
    }
}

/// Normalization statistics kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes across channels at every time step, then applies per-channel
/// scale and shift.
pub fn layer_norm_forward(
    x: &[f64],
    c: usize,
    t: usize,
    gamma: &[f64],
    beta: &[f64],
    y: &mut [f64],
    cache: Option<&mut LnCache>,
) {
    let mut mean = vec![0.0; t];
    for row in x.chunks_exact(t) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    let cf = c as f64;
    mean.iter_mut().for_each(|m| *m /= cf);
    let mut var = vec![0.0; t];
    for row in x.chunks_exact(t) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv: Vec<f64> = var.iter().map(|s| 1.0 / (s / cf + LN_EPS).sqrt()).collect();
    for (ci, (xr, yr)) in x.chunks_exact(t).zip(y.chunks_exact_mut(t)).enumerate() {
        let (g, b) = (gamma[ci], beta[ci]);
        for j in 0..t {
            yr[j] = (xr[j] - mean[j]) * inv[j] * g + b;
        }
    }
    if let Some(cache) = cache {
        cache.xhat.resize(c * t, 0.0);
        for (xr, hr) in x.chunks_exact(t).zip(cache.xhat.chunks_exact_mut(t)) {
            for j in 0..t {
                hr[j] = (xr[j] - mean[j]) * inv[j];
            }
        }
        cache.inv_std = inv;
    }
}

/// Overwrites `dy` with the input gradient; accumulates `dgamma`, `dbeta`.
pub fn layer_norm_backward(
    dy: &mut [f64],
    c: usize,
    t: usize,
    gamma: &[f64],
    cache: &LnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let mut sum_g = vec![0.0; t];
    let mut sum_gx = vec![0.0; t];
    for (ci, (dr, hr)) in dy.chunks_exact_mut(t).zip(cache.xhat.chunks_exact(t)).enumerate() {
        let (mut dg, mut dbt) = (0.0, 0.0);
        let g = gamma[ci];
        for j in 0..t {
            dg += dr[j] * hr[j];
            dbt += dr[j];
            dr[j] *= g;
            sum_g[j] += dr[j];
            sum_gx[j] += dr[j] * hr[j];
        }
        dgamma[ci] += dg;
        dbeta[ci] += dbt;
    }
    let cf = c as f64;
    for (dr, hr) in dy.chunks_exact_mut(t).zip(cache.xhat.chunks_exact(t)) {
        for j in 0..t {
            dr[j] = cache.inv_std[j] / cf * (cf * dr[j] - sum_g[j] - hr[j] * sum_gx[j]);
        }
    }
}

/// Multiplies each channel row by its mask factor (0 or `1 / (1 - p)`).
pub fn apply_channel_mask(x: &mut [f64], t: usize, mask: &[f64]) {
    for (row, &m) in x.chunks_exact_mut(t).zip(mask) {
        if m != 1.0 {
            row.iter_mut().for_each(|v| *v *= m);
        }
    }
}

/// `y = W * x + b` for a pointwise (kernel 1) map; `w` is `[rows x cin]`.
pub fn pointwise(x: &[f64], cin: usize, t: usize, w: &[f64], b: &[f64], rows: usize, y: &mut [f64]) {
    // SAFETY: shapes `[rows x cin] * [cin x t] -> [rows x t]` match the slices.
    unsafe {
        dgemm(
            rows,
            cin,
            t,
            1.0,
            w.as_ptr(),
            cin as isize,
            1,
            x.as_ptr(),
            t as isize,
            1,
            0.0,
            y.as_mut_ptr(),
            t as isize,
            1,
        );
    }
    for (r, row) in y.chunks_exact_mut(t).enumerate() {
        let bias = b[r];
        row.iter_mut().for_each(|v| *v += bias);
    }
}

/// Backward of [`pointwise`]; accumulates into `dw`, `db`, `dx`.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward(
    x: &[f64],
    cin: usize,
    t: usize,
    w: &[f64],
    rows: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    // SAFETY: dW += dY [rows x t] * X^T [t x cin]; dX += W^T [cin x rows] * dY.
    unsafe {
        dgemm(
            rows,
            t,
            cin,
            1.0,
            dy.as_ptr(),
            t as isize,
            1,
            x.as_ptr(),
            1,
            t as isize,
            1.0,
            dw.as_mut_ptr(),
            cin as isize,
            1,
        );
        if let Some(dx) = dx {
            dgemm(
                cin,
                rows,
                t,
                1.0,
                w.as_ptr(),
                1,
                cin as isize,
                dy.as_ptr(),
                t as isize,
                1,
                1.0,
                dx.as_mut_ptr(),
                t as isize,
                1,
            );
        }
    }
    for (r, row) in dy.chunks_exact(t).enumerate() {
        db[r] += row.iter().sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct-sum convolution used as the oracle.
    fn conv_naive(c: &Conv, x: &[f64], t: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; c.cout * t];
        for co in 0..c.cout {
            for j in 0..t {
                let mut s = b[co];
                for ci in 0..c.cin {
                    for k in 0..c.kernel {
                        let p = j as isize + c.offset(k);
                        if p >= 0 && (p as usize) < t {
                            s += w[(co * c.cin + ci) * c.kernel + k] * x[ci * t + p as usize];
                        }
                    }
                }
                y[co * t + j] = s;
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum_across_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (causal, t) in [(false, 50), (false, 2500), (true, 1300)] {
            let c = Conv {
                cin: 3,
                cout: 4,
                kernel: 5,
                dilation: 7,
                causal,
            };
            let x = rand_vec(&mut rng, c.cin * t);
            let w = rand_vec(&mut rng, c.weight_len());
            let b = rand_vec(&mut rng, c.cout);
            let mut y = vec![0.0; c.cout * t];
            c.forward(&x, t, &w, &b, &mut y);
            let want = conv_naive(&c, &x, t, &w, &b);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <dy, conv(x)> is linear in x and w; its gradients are checked
        // against the explicit adjoint of the direct sum
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Conv {
            cin: 2,
            cout: 3,
            kernel: 3,
            dilation: 2,
            causal: false,
        };
        let t = 1500;
        let x = rand_vec(&mut rng, c.cin * t);
        let w = rand_vec(&mut rng, c.weight_len());
        let dy = rand_vec(&mut rng, c.cout * t);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; c.cout];
        let mut dx = vec![0.0; x.len()];
        c.backward(&x, t, &w, &dy, &mut dw, &mut db, Some(&mut dx));
        let zero_b = vec![0.0; c.cout];
        for i in (0..w.len()).step_by(3) {
            let mut e = vec![0.0; w.len()];
            e[i] = 1.0;
            let y = conv_naive(&c, &x, t, &e, &zero_b);
            let want: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            assert!((dw[i] - want).abs() < 1e-9);
        }
        for i in (0..x.len()).step_by(211) {
            let mut e = vec![0.0; x.len()];
            e[i] = 1.0;
            let y = conv_naive(&c, &e, t, &w, &zero_b);
            let want: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            assert!((dx[i] - want).abs() < 1e-12);
        }
        for co in 0..c.cout {
            let want: f64 = dy[co * t..(co + 1) * t].iter().sum();
            assert!((db[co] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, t) = (4, 6);
        let x = rand_vec(&mut rng, c * t);
        let gamma = rand_vec(&mut rng, c);
        let beta = rand_vec(&mut rng, c);
        let probe = rand_vec(&mut rng, c * t);
        let f = |x: &[f64], gamma: &[f64], beta: &[f64]| {
            let mut y = vec![0.0; c * t];
            layer_norm_forward(x, c, t, gamma, beta, &mut y, None);
            y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = vec![0.0; c * t];
        let mut cache = LnCache::default();
        layer_norm_forward(&x, c, t, &gamma, &beta, &mut y, Some(&mut cache));
        let mut dx = probe.clone();
        let mut dg = vec![0.0; c];
        let mut dbt = vec![0.0; c];
        layer_norm_backward(&mut dx, c, t, &gamma, &cache, &mut dg, &mut dbt);
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, &gamma, &beta) - f(&b, &gamma, &beta)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx[i]);
        }
        for i in 0..c {
            let (mut a, mut b) = (gamma.clone(), gamma.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&x, &a, &beta) - f(&x, &b, &beta)) / (2.0 * h);
            assert!((fd - dg[i]).abs() < 1e-6);
            let (mut a, mut b) = (beta.clone(), beta.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&x, &gamma, &a) - f(&x, &gamma, &b)) / (2.0 * h);
            assert!((fd - dbt[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_output_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, t) = (8, 5);
        let x = rand_vec(&mut rng, c * t);
        let mut y = vec![0.0; c * t];
        layer_norm_forward(&x, c, t, &[1.0; 8], &[0.0; 8], &mut y, None);
        for j in 0..t {
            let col: Vec<f64> = (0..c).map(|ci| y[ci * t + j]).collect();
            let m = col.iter().sum::<f64>() / c as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / c as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn pointwise_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cin, rows, t) = (3, 2, 7);
        let x = rand_vec(&mut rng, cin * t);
        let w = rand_vec(&mut rng, rows * cin);
        let b = rand_vec(&mut rng, rows);
        let dy = rand_vec(&mut rng, rows * t);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; rows];
        let mut dx = vec![0.0; x.len()];
        pointwise_backward(&x, cin, t, &w, rows, &dy, &mut dw, &mut db, Some(&mut dx));
        for r in 0..rows {
            for ci in 0..cin {
                let want: f64 = (0..t).map(|j| dy[r * t + j] * x[ci * t + j]).sum();
                assert!((dw[r * cin + ci] - want).abs() < 1e-12);
            }
        }
        for ci in 0..cin {
            for j in 0..t {
                let want: f64 = (0..rows).map(|r| w[r * cin + ci] * dy[r * t + j]).sum();
                assert!((dx[ci * t + j] - want).abs() < 1e-12);
            }
        }
        let mut y = vec![0.0; rows * t];
        pointwise(&x, cin, t, &w, &b, rows, &mut y);
        let want = b[1] + (0..cin).map(|ci| w[cin + ci] * x[ci * t + 4]).sum::<f64>();
        assert!((y[t + 4] - want).abs() < 1e-12);
    }
}
