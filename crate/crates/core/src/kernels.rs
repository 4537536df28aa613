//! Forward and backward kernels for the non-convolution primitives.
//!
//! Everything here works on flat row-major buffers; shape checking happens
//! in [`crate::autograd`] before these are called.

/// Per-frame group normalization over `(N, C, T, H, W)`.
///
/// Statistics are taken over `(C / groups, H, W)` separately for every
/// `(n, group, t)`, so a frame never sees another frame's values.
pub struct GroupNormOut {
    pub y: Vec<f32>,
    pub x_hat: Vec<f32>,
    /// One entry per `(n, group, t)`.
    pub inv_std: Vec<f32>,
}

pub fn group_norm_forward(
    x: &[f32],
    [n, c, t, h, w]: [usize; 5],
    groups: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> GroupNormOut {
    let cpg = c / groups;
    let plane = h * w;
    let m = (cpg * plane) as f64;
    let mut y = vec![0.0f32; x.len()];
    let mut x_hat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; n * groups * t];
    for ni in 0..n {
        for g in 0..groups {
            for ti in 0..t {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for ci in g * cpg..(g + 1) * cpg {
                    let off = ((ni * c + ci) * t + ti) * plane;
                    for &v in &x[off..off + plane] {
                        sum += v as f64;
                        sq += v as f64 * v as f64;
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let is = 1.0 / (var + eps as f64).sqrt();
                inv_std[(ni * groups + g) * t + ti] = is as f32;
                for ci in g * cpg..(g + 1) * cpg {
                    let off = ((ni * c + ci) * t + ti) * plane;
                    let (ga, be) = (gamma[ci], beta[ci]);
                    for k in off..off + plane {
                        let xh = ((x[k] as f64 - mean) * is) as f32;
                        x_hat[k] = xh;
                        y[k] = ga * xh + be;
                    }
                }
            }
        }
    }
    GroupNormOut { y, x_hat, inv_std }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    dy: &[f32],
    x_hat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    [n, c, t, h, w]: [usize; 5],
    groups: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let cpg = c / groups;
    let plane = h * w;
    let m = (cpg * plane) as f64;
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for ni in 0..n {
        for g in 0..groups {
            for ti in 0..t {
                let mut mean_d = 0.0f64;
                let mut mean_dx = 0.0f64;
                for ci in g * cpg..(g + 1) * cpg {
                    let off = ((ni * c + ci) * t + ti) * plane;
                    for k in off..off + plane {
                        let d = dy[k] as f64;
                        dgamma[ci] += d * x_hat[k] as f64;
                        dbeta[ci] += d;
                        let dxh = d * gamma[ci] as f64;
                        mean_d += dxh;
                        mean_dx += dxh * x_hat[k] as f64;
                    }
                }
                mean_d /= m;
                mean_dx /= m;
                let is = inv_std[(ni * groups + g) * t + ti] as f64;
                for ci in g * cpg..(g + 1) * cpg {
                    let off = ((ni * c + ci) * t + ti) * plane;
                    for k in off..off + plane {
                        let dxh = dy[k] as f64 * gamma[ci] as f64;
                        dx[k] = (is * (dxh - mean_d - x_hat[k] as f64 * mean_dx)) as f32;
                    }
                }
            }
        }
    }
    (
        dx,
        dgamma.into_iter().map(|v| v as f32).collect(),
        dbeta.into_iter().map(|v| v as f32).collect(),
    )
}

/// Prepends `pad` copies of frame 0 along time.
pub fn pad_time_replicate(x: &[f32], [n, c, t, h, w]: [usize; 5], pad: usize) -> Vec<f32> {
    let plane = h * w;
    let to = t + pad;
    let mut out = Vec::with_capacity(n * c * to * plane);
    for nc in 0..n * c {
        let src = &x[nc * t * plane..(nc + 1) * t * plane];
        for _ in 0..pad {
            out.extend_from_slice(&src[..plane]);
        }
        out.extend_from_slice(src);
    }
    out
}

pub fn pad_time_replicate_backward(
    dy: &[f32],
    [n, c, t, h, w]: [usize; 5],
    pad: usize,
) -> Vec<f32> {
    let plane = h * w;
    let to = t + pad;
    let mut dx = vec![0.0f32; n * c * t * plane];
    for nc in 0..n * c {
        let src = &dy[nc * to * plane..(nc + 1) * to * plane];
        let dst = &mut dx[nc * t * plane..(nc + 1) * t * plane];
        for f in 0..=pad {
            for (d, s) in dst[..plane]
                .iter_mut()
                .zip(&src[f * plane..(f + 1) * plane])
            {
                *d += s;
            }
        }
        dst[plane..].copy_from_slice(&src[(pad + 1) * plane..]);
    }
    dx
}

/// Emits frame 0 once and every later frame twice: `1 + m` frames become `1 + 2m`.
pub fn repeat_frames_causal(x: &[f32], [n, c, t, h, w]: [usize; 5]) -> Vec<f32> {
    let plane = h * w;
    let to = 2 * t - 1;
    let mut out = Vec::with_capacity(n * c * to * plane);
    for nc in 0..n * c {
        let src = &x[nc * t * plane..(nc + 1) * t * plane];
        out.extend_from_slice(&src[..plane]);
        for f in 1..t {
            let frame = &src[f * plane..(f + 1) * plane];
            out.extend_from_slice(frame);
            out.extend_from_slice(frame);
        }
    }
    out
}

pub fn repeat_frames_causal_backward(dy: &[f32], [n, c, t, h, w]: [usize; 5]) -> Vec<f32> {
    let plane = h * w;
    let to = 2 * t - 1;
    let mut dx = vec![0.0f32; n * c * t * plane];
    for nc in 0..n * c {
        let src = &dy[nc * to * plane..(nc + 1) * to * plane];
        let dst = &mut dx[nc * t * plane..(nc + 1) * t * plane];
        dst[..plane].copy_from_slice(&src[..plane]);
        for f in 1..t {
            let a = &src[(2 * f - 1) * plane..2 * f * plane];
            let b = &src[2 * f * plane..(2 * f + 1) * plane];
            for ((d, x), y) in dst[f * plane..(f + 1) * plane].iter_mut().zip(a).zip(b) {
                *d = x + y;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x spatial upsampling of `(…, H, W)` planes.
pub fn upsample_nearest2(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h {
            let row = &mut dst[2 * i * w2..(2 * i + 1) * w2];
            for j in 0..w {
                let v = src[i * w + j];
                row[2 * j] = v;
                row[2 * j + 1] = v;
            }
            dst.copy_within(2 * i * w2..(2 * i + 1) * w2, (2 * i + 1) * w2);
        }
    }
    out
}

pub fn upsample_nearest2_backward(dy: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let w2 = 2 * w;
    let mut dx = vec![0.0f32; planes * h * w];
    for p in 0..planes {
        let src = &dy[p * 4 * h * w..(p + 1) * 4 * h * w];
        for i in 0..h {
            for j in 0..w {
                let a = 2 * i * w2 + 2 * j;
                let b = a + w2;
                dx[p * h * w + i * w + j] = src[a] + src[a + 1] + src[b] + src[b + 1];
            }
        }
    }
    dx
}

/// Generic axis permutation: output axis `k` is input axis `perm[k]`.
pub fn permute(x: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for k in (0..rank.saturating_sub(1)).rev() {
        in_strides[k] = in_strides[k + 1] * shape[k + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for k in (0..rank).rev() {
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    (out, out_shape)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Batched `C[b] = A[b] (m x k) * B[b] (k x n)`, optionally transposing either operand.
#[allow(clippy::too_many_arguments)]
pub fn batched_matmul(
    a: &[f32],
    b: &[f32],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f32> {
    let mut c = vec![0.0f32; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let sa = if trans_a { (1, m) } else { (k, 1) };
        let sb = if trans_b { (1, k) } else { (n, 1) };
        crate::conv::gemm_strided(
            m,
            k,
            n,
            ab,
            sa,
            bb,
            sb,
            0.0,
            &mut c[bi * m * n..(bi + 1) * m * n],
            (n, 1),
        );
    }
    c
}

pub fn softmax_rows(x: &[f32], row: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (src, dst) in x.chunks(row).zip(out.chunks_mut(row)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for (d, &s) in dst.iter_mut().zip(src) {
            let e = (s - max).exp();
            *d = e;
            z += e as f64;
        }
        let inv = (1.0 / z) as f32;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

pub fn softmax_rows_backward(dy: &[f32], y: &[f32], row: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; y.len()];
    for ((g, s), d) in dy.chunks(row).zip(y.chunks(row)).zip(dx.chunks_mut(row)) {
        let dot: f64 = g.iter().zip(s).map(|(a, b)| *a as f64 * *b as f64).sum();
        for ((dd, &gg), &ss) in d.iter_mut().zip(g).zip(s) {
            *dd = ss * (gg - dot as f32);
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
