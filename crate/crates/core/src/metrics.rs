//! Reconstruction quality: PSNR and SSIM for videos with peak value 1.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<[usize; 5]> {
    let dims = a.dims5(op)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(dims)
}

/// PSNR of each video in the batch, averaged over its frames.
pub fn psnr_per_video(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let [n, c, t, h, w] = check_pair("psnr", a, b)?;
    let plane = h * w;
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut total = 0.0;
        for ti in 0..t {
            let mut se = 0.0f64;
            for ci in 0..c {
                let base = ((ni * c + ci) * t + ti) * plane;
                for i in base..base + plane {
                    let d = (ad[i] - bd[i]) as f64;
                    se += d * d;
                }
            }
            let mse = se / (c * plane) as f64;
            total += if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
            };
        }
        out.push(total / t as f64);
    }
    Ok(out)
}

/// Mean PSNR over the batch.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let v = psnr_per_video(a, b)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..k).map(|i| g[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..k).map(|i| g[i] * rows[(yo + i) * wo + xo]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let [mu_a, mu_b, s_aa, s_bb, s_ab] = [&a, &b, &aa, &bb, &ab].map(|p| filter_valid(p, h, w, g));
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / mu_a.len() as f64
}

/// SSIM of each video, averaged over frames and channels.
pub fn ssim_per_video(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let [n, c, t, h, w] = check_pair("ssim", a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("frames of {h}x{w} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let g = gaussian_window();
    let plane = h * w;
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut total = 0.0;
        for ci in 0..c {
            for ti in 0..t {
                let base = ((ni * c + ci) * t + ti) * plane;
                total += ssim_plane(&ad[base..base + plane], &bd[base..base + plane], h, w, &g);
            }
        }
        out.push(total / (c * t) as f64);
    }
    Ok(out)
}

/// Mean SSIM over the batch.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let v = ssim_per_video(a, b)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
