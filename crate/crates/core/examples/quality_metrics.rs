//! PSNR and SSIM on clips with growing amounts of noise.
//!
//!     cargo run --release --example quality_metrics

use odvae::metrics::{psnr, psnr_per_video, ssim};
use odvae::training::SyntheticDataset;
use odvae::{Result, Tensor};

fn main() -> Result<()> {
    let clean = SyntheticDataset::new(3, 2, 5, 64, 64)?.batch(0, 2)?;
    println!(
        "identical: psnr {} ssim {}",
        psnr(&clean, &clean)?,
        ssim(&clean, &clean)?
    );
    for std in [0.01, 0.03, 0.1, 0.3] {
        let noise = Tensor::randn(clean.shape().to_vec(), 0.0, std, 1);
        let noisy = clean.zip_map(&noise, |x, n| (x + n).clamp(0.0, 1.0))?;
        println!(
            "noise std {std:<4}: psnr {:6.2} dB  ssim {:.4}  per video {:?}",
            psnr(&clean, &noisy)?,
            ssim(&clean, &noisy)?,
            psnr_per_video(&clean, &noisy)?
        );
    }
    Ok(())
}
