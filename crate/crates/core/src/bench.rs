//! Encoder timing across variants.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{OdVae, OdVaeConfig, Variant};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    pub frames: usize,
    pub size: usize,
    pub repeat: usize,
    /// Architecture shared by all variants; its `variant` field is ignored.
    pub model: OdVaeConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub variant: Variant,
    /// Median encode wall-clock in milliseconds.
    pub ms: f32,
    /// Encoder multiply-adds for one clip.
    pub flops: u64,
    pub samples_ms: Vec<f32>,
}

impl BenchResult {
    pub fn line(&self) -> String {
        format!(
            "variant={} ms={} flops={}",
            self.variant, self.ms, self.flops
        )
    }
}

fn median(v: &[f32]) -> f32 {
    let mut s = v.to_vec();
    s.sort_by(f32::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Times `repeat` encodes per variant, interleaving variants so that drift in
/// machine load affects all of them alike. One untimed warm-up encode runs first.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    if cfg.repeat == 0 || cfg.variants.is_empty() {
        return Err(Error::Config(
            "bench needs at least one variant and one repeat".into(),
        ));
    }
    let shape = vec![1, 3, cfg.frames, cfg.size, cfg.size];
    let x = Tensor::rand_uniform(shape.clone(), 0.0, 1.0, cfg.model.seed);
    let models = cfg
        .variants
        .iter()
        .map(|&v| {
            let mut c = cfg.model.clone();
            c.variant = v;
            OdVae::build(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = vec![Vec::with_capacity(cfg.repeat); models.len()];
    for m in &models {
        m.encode(&x)?;
    }
    for _ in 0..cfg.repeat {
        for (m, s) in models.iter().zip(samples.iter_mut()) {
            let t = Instant::now();
            let z = m.encode(&x)?;
            s.push(t.elapsed().as_secs_f32() * 1e3);
            drop(z);
        }
    }
    models
        .iter()
        .zip(samples)
        .map(|(m, s)| {
            Ok(BenchResult {
                variant: m.config().variant,
                ms: median(&s),
                flops: m.flops(&shape)?.encoder,
                samples_ms: s,
            })
        })
        .collect()
}
