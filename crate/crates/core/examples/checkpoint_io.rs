//! Save and reload model weights and latent files.
//!
//!     cargo run --release --example checkpoint_io

use odvae::formats::{load_checkpoint, save_checkpoint, OdvtFile};
use odvae::{OdVae, OdVaeConfig, Tensor, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("odvae_checkpoint_io");
    std::fs::create_dir_all(&dir)?;

    let cfg = OdVaeConfig::toy(8, Variant::V4);
    let model = OdVae::build(&cfg)?;
    let ckpt = dir.join("model.odck");
    save_checkpoint(model.params(), &ckpt)?;
    let params = load_checkpoint(&ckpt)?;
    println!(
        "{} tensors, {} bytes",
        params.len(),
        std::fs::metadata(&ckpt)?.len()
    );
    for (name, t) in params.iter().take(4) {
        println!("  {name} {:?}", t.shape());
    }
    let restored = OdVae::with_params(&cfg, model.architecture(), params)?;

    let clip = Tensor::rand_uniform(vec![1, 3, 9, 32, 32], 0.0, 1.0, 5);
    let z = restored.encode(&clip)?.mean;
    let path = dir.join("latent.odvt");
    OdvtFile::latent(z.clone()).write(&path)?;
    let back = OdvtFile::read(&path)?;
    println!(
        "latent {:?}, flagged latent: {}, bitwise equal: {}",
        back.tensor.shape(),
        back.latent,
        back.tensor.bitwise_eq(&z)
    );
    println!(
        "same as original model: {}",
        model.encode(&clip)?.mean.bitwise_eq(&z)
    );
    Ok(())
}
