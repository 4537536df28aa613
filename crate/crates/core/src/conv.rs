//! Convolution kernels over `(N, C, T, H, W)` buffers.
//!
//! Every convolution in the crate, 2D or 3D, funnels through here: a 2D
//! convolution is a 3D one with `Kt = 1`. Columns are unrolled with im2col
//! one chunk of output frames at a time and multiplied with `sgemm`, so the
//! scratch buffer stays bounded regardless of clip length.

use crate::error::{Error, Result};

/// Upper bound on the im2col scratch size, in elements.
const COL_BUDGET: usize = 1 << 22;

/// Stride and zero padding of a convolution. Temporal padding may be asymmetric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    /// (st, sh, sw)
    pub stride: [usize; 3],
    /// (front, back) along time
    pub pad_t: [usize; 2],
    /// (ph, pw), applied on both sides
    pub pad_hw: [usize; 2],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], pad_t: [usize; 2], pad_hw: [usize; 2]) -> Self {
        ConvGeometry {
            stride,
            pad_t,
            pad_hw,
        }
    }

    pub fn unit() -> Self {
        Self::new([1, 1, 1], [0, 0], [0, 0])
    }
}

/// Resolved extents of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub to: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn resolve(input: &[usize], kernel: &[usize], g: &ConvGeometry) -> Result<Self> {
        let (&[n, ci, t, h, w], &[co, kci, kt, kh, kw]) = (input, kernel) else {
            return Err(Error::shape(
                "conv",
                format!("expected rank-5 input and kernel, got {input:?} and {kernel:?}"),
            ));
        };
        if kci != ci {
            return Err(Error::shape(
                "conv",
                format!("input has {ci} channels, kernel expects {kci}"),
            ));
        }
        if g.stride.contains(&0) {
            return Err(Error::shape("conv", "zero stride"));
        }
        let span = |len: usize, p0: usize, p1: usize, k: usize, s: usize, axis: &str| {
            let padded = len + p0 + p1;
            if padded < k {
                Err(Error::shape(
                    "conv",
                    format!("{axis}: padded extent {padded} smaller than kernel {k}"),
                ))
            } else {
                Ok((padded - k) / s + 1)
            }
        };
        let to = span(t, g.pad_t[0], g.pad_t[1], kt, g.stride[0], "time")?;
        let ho = span(h, g.pad_hw[0], g.pad_hw[0], kh, g.stride[1], "height")?;
        let wo = span(w, g.pad_hw[1], g.pad_hw[1], kw, g.stride[2], "width")?;
        Ok(ConvDims {
            n,
            ci,
            t,
            h,
            w,
            co,
            kt,
            kh,
            kw,
            to,
            ho,
            wo,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.to, self.ho, self.wo]
    }

    /// Rows of the unrolled patch matrix: `Ci * Kt * Kh * Kw`.
    pub fn patch_len(&self) -> usize {
        self.ci * self.kt * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn frames_per_chunk(&self) -> usize {
        let per_frame = self.patch_len() * self.out_plane();
        (COL_BUDGET / per_frame.max(1)).clamp(1, self.to)
    }

    /// Multiply-accumulate count of the forward pass.
    pub fn macs(&self) -> u64 {
        (self.co * self.patch_len()) as u64 * (self.n * self.to * self.ho * self.wo) as u64
    }
}

/// Unrolls output frames `[f0, f1)` of one batch element into `col`
/// (row-major, `patch_len` rows by `(f1 - f0) * Ho * Wo` columns).
fn im2col(x: &[f32], d: &ConvDims, g: &ConvGeometry, f0: usize, f1: usize, col: &mut [f32]) {
    let cols = (f1 - f0) * d.out_plane();
    let [st, sh, sw] = g.stride;
    let (pf, ph, pw) = (
        g.pad_t[0] as isize,
        g.pad_hw[0] as isize,
        g.pad_hw[1] as isize,
    );
    let plane = d.h * d.w;
    for ci in 0..d.ci {
        for kt in 0..d.kt {
            for kh in 0..d.kh {
                for kw in 0..d.kw {
                    let r = ((ci * d.kt + kt) * d.kh + kh) * d.kw + kw;
                    let row = &mut col[r * cols..(r + 1) * cols];
                    // valid wo range: 0 <= wo*sw + kw - pw < w
                    let wo_lo = ceil_div_nonneg(pw - kw as isize, sw as isize).min(d.wo);
                    let wo_hi = ceil_div_nonneg(d.w as isize + pw - kw as isize, sw as isize)
                        .min(d.wo)
                        .max(wo_lo);
                    for (fi, to) in (f0..f1).enumerate() {
                        let ti = (to * st) as isize + kt as isize - pf;
                        let frame = &mut row[fi * d.out_plane()..(fi + 1) * d.out_plane()];
                        if ti < 0 || ti >= d.t as isize {
                            frame.fill(0.0);
                            continue;
                        }
                        let src_frame = &x[(ci * d.t + ti as usize) * plane..][..plane];
                        for ho in 0..d.ho {
                            let hi = (ho * sh) as isize + kh as isize - ph;
                            let dst = &mut frame[ho * d.wo..(ho + 1) * d.wo];
                            if hi < 0 || hi >= d.h as isize {
                                dst.fill(0.0);
                                continue;
                            }
                            let src = &src_frame[hi as usize * d.w..][..d.w];
                            dst[..wo_lo].fill(0.0);
                            dst[wo_hi..].fill(0.0);
                            let wi0 = (wo_lo * sw) as isize + kw as isize - pw;
                            if sw == 1 {
                                let wi0 = wi0 as usize;
                                dst[wo_lo..wo_hi].copy_from_slice(&src[wi0..wi0 + wo_hi - wo_lo]);
                            } else {
                                for (j, v) in dst[wo_lo..wo_hi].iter_mut().enumerate() {
                                    *v = src[wi0 as usize + j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds an unrolled gradient back into the input-shaped buffer `dx`.
fn col2im(dcol: &[f32], d: &ConvDims, g: &ConvGeometry, f0: usize, f1: usize, dx: &mut [f32]) {
    let cols = (f1 - f0) * d.out_plane();
    let [st, sh, sw] = g.stride;
    let (pf, ph, pw) = (
        g.pad_t[0] as isize,
        g.pad_hw[0] as isize,
        g.pad_hw[1] as isize,
    );
    let plane = d.h * d.w;
    for ci in 0..d.ci {
        for kt in 0..d.kt {
            for kh in 0..d.kh {
                for kw in 0..d.kw {
                    let r = ((ci * d.kt + kt) * d.kh + kh) * d.kw + kw;
                    let row = &dcol[r * cols..(r + 1) * cols];
                    let wo_lo = ceil_div_nonneg(pw - kw as isize, sw as isize).min(d.wo);
                    let wo_hi = ceil_div_nonneg(d.w as isize + pw - kw as isize, sw as isize)
                        .min(d.wo)
                        .max(wo_lo);
                    for (fi, to) in (f0..f1).enumerate() {
                        let ti = (to * st) as isize + kt as isize - pf;
                        if ti < 0 || ti >= d.t as isize {
                            continue;
                        }
                        let frame = &row[fi * d.out_plane()..(fi + 1) * d.out_plane()];
                        let dst_frame = &mut dx[(ci * d.t + ti as usize) * plane..][..plane];
                        for ho in 0..d.ho {
                            let hi = (ho * sh) as isize + kh as isize - ph;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            let src = &frame[ho * d.wo..(ho + 1) * d.wo];
                            let dst = dx_row(dst_frame, hi as usize, d.w);
                            let wi0 = ((wo_lo * sw) as isize + kw as isize - pw) as usize;
                            for (j, &v) in src[wo_lo..wo_hi].iter().enumerate() {
                                dst[wi0 + j * sw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dx_row(frame: &mut [f32], hi: usize, w: usize) -> &mut [f32] {
    &mut frame[hi * w..(hi + 1) * w]
}

/// `ceil(a / b)` clamped below at zero, for `b > 0`.
fn ceil_div_nonneg(a: isize, b: isize) -> usize {
    if a <= 0 {
        0
    } else {
        ((a + b - 1) / b) as usize
    }
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above spell out the bounds every caller
    // satisfies: each operand slice covers its strided extent.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Forward convolution. `x` is `(N, Ci, T, H, W)`, `w` is `(Co, Ci, Kt, Kh, Kw)`.
pub fn conv_forward(
    x: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<f32> {
    let r = d.patch_len();
    let plane = d.out_plane();
    let p = d.to * plane;
    let in_len = d.ci * d.t * d.h * d.w;
    let mut out = vec![0.0f32; d.n * d.co * p];
    let chunk = d.frames_per_chunk();
    let mut col = vec![0.0f32; r * chunk * plane];
    for n in 0..d.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * d.co * p..(n + 1) * d.co * p];
        let mut f0 = 0;
        while f0 < d.to {
            let f1 = (f0 + chunk).min(d.to);
            let cols = (f1 - f0) * plane;
            let col = &mut col[..r * cols];
            im2col(xn, d, g, f0, f1, col);
            gemm_strided(
                d.co,
                r,
                cols,
                w,
                (r, 1),
                col,
                (cols, 1),
                0.0,
                &mut on[f0 * plane..],
                (p, 1),
            );
            f0 = f1;
        }
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut on[co * p..(co + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients of a convolution. Each output is computed only when requested.
pub struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub fn conv_backward(
    x: &[f32],
    w: &[f32],
    dout: &[f32],
    d: &ConvDims,
    g: &ConvGeometry,
    need: [bool; 3],
) -> ConvGrads {
    let [need_x, need_w, need_b] = need;
    let r = d.patch_len();
    let plane = d.out_plane();
    let p = d.to * plane;
    let in_len = d.ci * d.t * d.h * d.w;
    let chunk = d.frames_per_chunk();
    let mut col = vec![
        0.0f32;
        if need_x || need_w {
            r * chunk * plane
        } else {
            0
        }
    ];
    let mut dx = need_x.then(|| vec![0.0f32; d.n * in_len]);
    let mut dw = need_w.then(|| vec![0.0f32; d.co * r]);
    let mut db = need_b.then(|| vec![0.0f32; d.co]);

    for n in 0..d.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let gn = &dout[n * d.co * p..(n + 1) * d.co * p];
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                let s: f64 = gn[co * p..(co + 1) * p].iter().map(|&v| v as f64).sum();
                *acc += s as f32;
            }
        }
        if !(need_x || need_w) {
            continue;
        }
        let mut f0 = 0;
        while f0 < d.to {
            let f1 = (f0 + chunk).min(d.to);
            let cols = (f1 - f0) * plane;
            let col = &mut col[..r * cols];
            let gchunk = &gn[f0 * plane..];
            if let Some(dw) = dw.as_mut() {
                im2col(xn, d, g, f0, f1, col);
                // dW[co, r] += sum_c dout[co, c] * col[r, c]
                gemm_strided(
                    d.co,
                    cols,
                    r,
                    gchunk,
                    (p, 1),
                    col,
                    (1, cols),
                    1.0,
                    dw,
                    (r, 1),
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcol[r, c] = sum_co W[co, r] * dout[co, c]
                gemm_strided(
                    r,
                    d.co,
                    cols,
                    w,
                    (1, r),
                    gchunk,
                    (p, 1),
                    0.0,
                    col,
                    (cols, 1),
                );
                col2im(col, d, g, f0, f1, &mut dx[n * in_len..(n + 1) * in_len]);
            }
            f0 = f1;
        }
    }
    ConvGrads { dx, dw, db }
}
