//! Train a small model on synthetic clips, starting from random weights and
//! from a briefly pretrained image model.
//!
//!     cargo run --release --example train_toy [steps]

use odvae::init::tail_init;
use odvae::training::{train_loop, DataSource, Objective, SyntheticDataset, TrainConfig};
use odvae::{OdVae, OdVaeConfig, Result, Tensor, Variant};

fn main() -> Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let cfg = OdVaeConfig::toy(16, Variant::V1);
    let validation: Vec<Tensor> = SyntheticDataset::new(999, 2, 9, 32, 32)?.iter().collect();
    let objective = Objective::new(1e-6);

    let twin_cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        steps: 100,
        ..Default::default()
    };
    let frames = DataSource::Synthetic(SyntheticDataset::new(5, 100_000, 1, 32, 32)?);
    let twin = train_loop(
        OdVae::build_image_twin(&cfg)?,
        &twin_cfg,
        &frames,
        &validation,
        &objective,
        |_| {},
    )?;
    println!(
        "image model pretrained, recon {:.4}",
        twin.evals.last().unwrap().recon
    );

    let run = TrainConfig {
        steps,
        eval_every: (steps / 5).max(1),
        ..Default::default()
    };
    let clips = DataSource::Synthetic(SyntheticDataset::new(7, 25, 9, 32, 32)?);
    let mut inflated = OdVae::build(&cfg)?;
    tail_init(&mut inflated, twin.model.params())?;

    for (label, model) in [("tail", inflated), ("random", OdVae::build(&cfg)?)] {
        let out = train_loop(model, &run, &clips, &validation, &objective, |m| {
            if m.step % 25 == 0 {
                println!("  {label} {}", m.log_line());
            }
        })?;
        for e in &out.evals {
            println!("{label} eval step={} recon={:.4}", e.step, e.recon);
        }
    }
    Ok(())
}
