//! Encode a synthetic clip to latents and decode it back.
//!
//!     cargo run --release --example compress_video

use odvae::metrics::{psnr, ssim};
use odvae::training::SyntheticDataset;
use odvae::{OdVae, OdVaeConfig, Result, Variant};

fn main() -> Result<()> {
    let model = OdVae::build(&OdVaeConfig::toy(16, Variant::V2))?;
    let clip = SyntheticDataset::new(1, 1, 17, 64, 64)?.clip(0);

    let posterior = model.encode(&clip)?;
    let latent = posterior.mean.clone();
    let restored = model.decode(&latent)?;

    println!("video  {:?} ({} values)", clip.shape(), clip.numel());
    println!("latent {:?} ({} values)", latent.shape(), latent.numel());
    println!("ratio  {:.1}x", clip.numel() as f32 / latent.numel() as f32);
    println!("decoded {:?}", restored.shape());
    // untrained weights, so expect poor quality
    println!(
        "psnr {:.2} dB  ssim {:.4}",
        psnr(&clip, &restored)?,
        ssim(&clip, &restored)?
    );
    Ok(())
}
