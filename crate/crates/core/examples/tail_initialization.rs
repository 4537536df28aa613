//! Inflate a per-frame image model into a video model and check that a
//! single frame goes through both identically.
//!
//!     cargo run --release --example tail_initialization

use odvae::init::{average_init, tail_init};
use odvae::{OdVae, OdVaeConfig, Result, Tensor, Variant};

fn main() -> Result<()> {
    let cfg = OdVaeConfig::toy(16, Variant::V1);
    let twin = OdVae::build_image_twin(&cfg)?;

    let mut tail = OdVae::build(&cfg)?;
    tail_init(&mut tail, twin.params())?;
    let mut average = OdVae::build(&cfg)?;
    average_init(&mut average, twin.params())?;

    let frame = Tensor::rand_uniform(vec![1, 3, 1, 32, 32], 0.0, 1.0, 3);
    let reference = twin.encode(&frame)?.mean;
    println!("single frame, |video - image| latent:");
    println!(
        "  tail    {:e}",
        tail.encode(&frame)?.mean.max_abs_diff(&reference)
    );
    println!(
        "  average {:e}",
        average.encode(&frame)?.mean.max_abs_diff(&reference)
    );

    // a 9-frame clip maps latent j to frame 4j under tail init
    let clip = Tensor::rand_uniform(vec![1, 3, 9, 32, 32], 0.0, 1.0, 4);
    let z = tail.encode(&clip)?.mean;
    for j in 0..3 {
        let per_frame = twin.encode(&clip.slice_time(4 * j, 4 * j + 1)?)?.mean;
        let diff = z.slice_time(j, j + 1)?.max_abs_diff(&per_frame);
        println!("latent {j} vs frame {}: {diff:e}", 4 * j);
    }
    Ok(())
}
