//! Channel-major tensors and the forward/backward kernels of each layer kind.

pub(crate) const LEAKY_SLOPE: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// `channels × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.plane();
        &self.data[k * n..(k + 1) * n]
    }
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n − 2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `C = A·B + beta·C` on row-major buffers; `ta`/`tb` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked in debug builds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `A·B` into a fresh buffer.
fn gemm_new(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
    let mut c = Vec::with_capacity(m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    // SAFETY: with beta = 0 dgemm writes every element of the m×n output
    // without reading it, so the spare capacity is fully initialized before
    // `set_len`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

#[derive(Debug, Clone)]
pub(crate) struct ConvCache {
    col: Vec<f64>,
    in_c: usize,
    h: usize,
    w: usize,
}

/// Source index along one axis for every output position and kernel tap.
fn tap_map(n: usize, k: usize) -> Vec<usize> {
    let p = (k / 2) as isize;
    (0..k)
        .flat_map(|t| (0..n).map(move |i| reflect(i as isize + t as isize - p, n)))
        .collect()
}

fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    if k == 1 {
        return x.data.clone();
    }
    let ys = tap_map(x.h, k);
    let xs = tap_map(x.w, k);
    let mut col = Vec::with_capacity(x.c * k * k * x.plane());
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let xmap = &xs[kx * x.w..(kx + 1) * x.w];
                for &sy in &ys[ky * x.h..(ky + 1) * x.h] {
                    let row = &src[sy * x.w..(sy + 1) * x.w];
                    col.extend(xmap.iter().map(|&sx| row[sx]));
                }
            }
        }
    }
    col
}

fn col2im(dcol: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    if k == 1 {
        return Tensor {
            c,
            h,
            w,
            data: dcol.to_vec(),
        };
    }
    let ys = tap_map(h, k);
    let xs = tap_map(w, k);
    let n = h * w;
    let mut out = Tensor::zeros(c, h, w);
    let mut rows = dcol.chunks_exact(w);
    for ci in 0..c {
        let dst = &mut out.data[ci * n..(ci + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let xmap = &xs[kx * w..(kx + 1) * w];
                for &sy in &ys[ky * h..(ky + 1) * h] {
                    let src = rows.next().expect("dcol sized c·k·k·h·w");
                    let drow = &mut dst[sy * w..(sy + 1) * w];
                    for (&sx, &g) in xmap.iter().zip(src) {
                        drow[sx] += g;
                    }
                }
            }
        }
    }
    out
}

/// Square `k × k` convolution with reflect padding; `weight` is `cout × (cin·k·k)`.
pub(crate) fn conv_forward(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    k: usize,
) -> (Tensor, ConvCache) {
    let n = x.plane();
    let kk = x.c * k * k;
    let col = im2col(x, k);
    let mut data = gemm_new(cout, kk, n, weight, false, &col, false);
    if let Some(b) = bias {
        for (co, row) in data.chunks_exact_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v += b[co]);
        }
    }
    let out = Tensor {
        c: cout,
        h: x.h,
        w: x.w,
        data,
    };
    let cache = ConvCache {
        col,
        in_c: x.c,
        h: x.h,
        w: x.w,
    };
    (out, cache)
}

/// Returns the input gradient; weight and bias gradients are written into the slices.
pub(crate) fn conv_backward(
    dy: &Tensor,
    cache: &ConvCache,
    weight: &[f64],
    k: usize,
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) -> Tensor {
    let n = cache.h * cache.w;
    let kk = cache.in_c * k * k;
    let cout = dy.c;
    gemm(cout, n, kk, &dy.data, false, &cache.col, true, 0.0, dweight);
    if let Some(db) = dbias {
        for (co, row) in dy.data.chunks_exact(n).enumerate() {
            db[co] = row.iter().sum();
        }
    }
    let dcol = gemm_new(kk, cout, n, weight, true, &dy.data, false);
    col2im(&dcol, cache.in_c, cache.h, cache.w, k)
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Tensor,
    inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Batch normalization over the spatial axes using the statistics of `x` itself.
pub(crate) fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let n = x.plane();
    let mut xhat = Tensor::zeros(x.c, x.h, x.w);
    let mut out = Tensor::zeros(x.c, x.h, x.w);
    let mut inv_std = vec![0.0; x.c];
    let mut batch_mean = vec![0.0; x.c];
    let mut batch_var = vec![0.0; x.c];
    for k in 0..x.c {
        let src = x.channel(k);
        let mean = src.iter().sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + BN_EPS).sqrt();
        let xh_row = &mut xhat.data[k * n..(k + 1) * n];
        let out_row = &mut out.data[k * n..(k + 1) * n];
        for ((xh, o), v) in xh_row.iter_mut().zip(out_row.iter_mut()).zip(src) {
            *xh = (v - mean) * is;
            *o = gamma[k] * *xh + beta[k];
        }
        inv_std[k] = is;
        batch_mean[k] = mean;
        batch_var[k] = var;
    }
    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    )
}

pub(crate) fn bn_forward_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor {
    let n = x.plane();
    let mut out = Tensor::zeros(x.c, x.h, x.w);
    for k in 0..x.c {
        let is = 1.0 / (running_var[k] + BN_EPS).sqrt();
        for (o, v) in out.data[k * n..(k + 1) * n].iter_mut().zip(x.channel(k)) {
            *o = gamma[k] * (v - running_mean[k]) * is + beta[k];
        }
    }
    out
}

pub(crate) fn bn_backward(
    dy: &Tensor,
    cache: &BnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let n = dy.plane();
    let nf = n as f64;
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for k in 0..dy.c {
        let g = dy.channel(k);
        let xh = cache.xhat.channel(k);
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        dgamma[k] = sum_gx;
        dbeta[k] = sum_g;
        let scale = gamma[k] * cache.inv_std[k] / nf;
        for i in 0..n {
            dx.data[k * n + i] = scale * (nf * g[i] - sum_g - xh[i] * sum_gx);
        }
    }
    dx
}

pub(crate) fn leaky_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { LEAKY_SLOPE * *v });
    out
}

/// Uses the layer output as the mask: it is positive exactly where the input is.
pub(crate) fn leaky_backward(dy: &Tensor, out: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data.iter_mut().zip(&out.data).for_each(|(d, &o)| {
        if o <= 0.0 {
            *d *= LEAKY_SLOPE
        }
    });
    dx
}

/// 2×2 max pooling with stride 2; returns the flat argmax index per output element.
pub(crate) fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut idx = vec![0; x.c * oh * ow];
    for k in 0..x.c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (k * x.h + 2 * y + dy) * x.w + 2 * xx + dx;
                        if x.data[i] > best_v {
                            best_v = x.data[i];
                            best = i;
                        }
                    }
                }
                let o = (k * oh + y) * ow + xx;
                out.data[o] = best_v;
                idx[o] = best;
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool_backward(dy: &Tensor, idx: &[usize], in_h: usize, in_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, in_h, in_w);
    for (g, &i) in dy.data.iter().zip(idx) {
        dx.data[i] += *g;
    }
    dx
}

/// Interpolation taps `(i0, i1, w0, w1)` for doubling a length-`n` axis.
fn upsample_taps(n: usize, bilinear: bool) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            if !bilinear {
                return (o / 2, o / 2, 1.0, 0.0);
            }
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

/// Doubles both spatial axes (half-pixel aligned bilinear, or nearest).
pub(crate) fn upsample_forward(x: &Tensor, bilinear: bool) -> Tensor {
    let ty = upsample_taps(x.h, bilinear);
    let tx = upsample_taps(x.w, bilinear);
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for k in 0..x.c {
        let src = x.channel(k);
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                out.data[(k * oh + oy) * ow + ox] = wy0 * (wx0 * src[y0 * x.w + x0] + wx1 * src[y0 * x.w + x1])
                    + wy1 * (wx0 * src[y1 * x.w + x0] + wx1 * src[y1 * x.w + x1]);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(dy: &Tensor, in_h: usize, in_w: usize, bilinear: bool) -> Tensor {
    let ty = upsample_taps(in_h, bilinear);
    let tx = upsample_taps(in_w, bilinear);
    let mut dx = Tensor::zeros(dy.c, in_h, in_w);
    let n = in_h * in_w;
    for k in 0..dy.c {
        let g = dy.channel(k);
        let dst = &mut dx.data[k * n..(k + 1) * n];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = g[oy * dy.w + ox];
                dst[y0 * in_w + x0] += wy0 * wx0 * v;
                dst[y0 * in_w + x1] += wy0 * wx1 * v;
                dst[y1 * in_w + x0] += wy1 * wx0 * v;
                dst[y1 * in_w + x1] += wy1 * wx1 * v;
            }
        }
    }
    dx
}

pub(crate) fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub(crate) fn split(dy: &Tensor, first_c: usize) -> (Tensor, Tensor) {
    let cut = first_c * dy.plane();
    (
        Tensor {
            c: first_c,
            h: dy.h,
            w: dy.w,
            data: dy.data[..cut].to_vec(),
        },
        Tensor {
            c: dy.c - first_c,
            h: dy.h,
            w: dy.w,
            data: dy.data[cut..].to_vec(),
        },
    )
}

pub(crate) fn sigmoid_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    out
}

pub(crate) fn sigmoid_backward(dy: &Tensor, out: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data
        .iter_mut()
        .zip(&out.data)
        .for_each(|(d, &y)| *d *= y * (1.0 - y));
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(2, 2), 0);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 2, 5, 6);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = [0.1, -0.2, 0.3];
        let (y, _) = conv_forward(&x, &w, Some(&b), 3, 3);
        for co in 0..3 {
            for r in 0..5 {
                for c in 0..6 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = reflect(r as isize + ky as isize - 1, 5);
                                let sx = reflect(c as isize + kx as isize - 1, 6);
                                acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.data[(ci * 5 + sy) * 6 + sx];
                            }
                        }
                    }
                    assert!((y.data[(co * 5 + r) * 6 + c] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1, 3] {
            let x = random(&mut rng, 3, 4, 4);
            let w: Vec<f64> = (0..2 * 3 * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (y, cache) = conv_forward(&x, &w, None, 2, k);
            let dy = random(&mut rng, 2, 4, 4);
            let mut dw = vec![0.0; w.len()];
            let dx = conv_backward(&dy, &cache, &w, k, &mut dw, None);
            // ⟨conv(x), dy⟩ = ⟨x, dx⟩ since the map is linear in x.
            assert!((dot(&y.data, &dy.data) - dot(&x.data, &dx.data)).abs() < 1e-10);
            // ... and linear in w.
            assert!((dot(&y.data, &dy.data) - dot(&w, &dw)).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bilinear in [true, false] {
            let x = random(&mut rng, 2, 3, 5);
            let y = upsample_forward(&x, bilinear);
            let dy = random(&mut rng, 2, 6, 10);
            let dx = upsample_backward(&dy, 3, 5, bilinear);
            assert!((dot(&y.data, &dy.data) - dot(&x.data, &dx.data)).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let x = Tensor {
            c: 1,
            h: 2,
            w: 2,
            data: vec![0.3; 4],
        };
        assert!(upsample_forward(&x, true).data.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor {
            c: 1,
            h: 2,
            w: 4,
            data: vec![1.0, 5.0, 0.0, -1.0, 2.0, 3.0, -3.0, -2.0],
        };
        let (y, idx) = maxpool_forward(&x);
        assert_eq!(y.data, vec![5.0, 0.0]);
        let dy = Tensor {
            c: 1,
            h: 1,
            w: 2,
            data: vec![1.0, 2.0],
        };
        let dx = maxpool_backward(&dy, &idx, 2, 4);
        assert_eq!(dx.data, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batchnorm_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 3, 4, 4);
        let (_, cache) = bn_forward_train(&x, &[1.0; 3], &[0.0; 3]);
        for k in 0..3 {
            let ch = cache.xhat.channel(k);
            let mean = ch.iter().sum::<f64>() / 16.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
