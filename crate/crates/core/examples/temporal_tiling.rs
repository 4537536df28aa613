//! Encode and decode a long clip in overlapping temporal groups.
//!
//!     cargo run --release --example temporal_tiling

use std::time::Instant;

use odvae::metrics::psnr;
use odvae::tiling::{tiled_decode, tiled_encode, Execution, TilingPlan};
use odvae::training::SyntheticDataset;
use odvae::{OdVae, OdVaeConfig, Result, Variant};

fn main() -> Result<()> {
    let model = OdVae::build(&OdVaeConfig::toy(8, Variant::V3))?;
    let clip = SyntheticDataset::new(2, 1, 97, 32, 32)?.clip(0);

    let t = Instant::now();
    let full = model.encode(&clip)?.mean;
    println!("untiled: latent {:?} in {:.2?}", full.shape(), t.elapsed());

    let plan = TilingPlan::new(97, 33)?;
    let gl = plan.latent_group_len();
    println!("groups: {:?}", plan.groups);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let t = Instant::now();
        let z = tiled_encode(&model, &clip, &plan, exec)?.mean;
        let y = tiled_decode(&model, &z, &plan, exec)?;
        println!(
            "{exec:?}: latent {:?}, first group vs untiled {:e}, psnr {:.2} dB, {:.2?}",
            z.shape(),
            z.slice_time(0, gl)?.max_abs_diff(&full.slice_time(0, gl)?),
            psnr(&clip, &y)?,
            t.elapsed()
        );
    }

    if let Err(e) = TilingPlan::new(97, 21) {
        println!("rejected: {e}");
    }
    Ok(())
}
