use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use indexmap::IndexMap;

use super::data::SyntheticDataset;
use super::objective::{check_finite, sample_on_tape, Objective};
use super::optim::{Adam, EmaState};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::formats::save_checkpoint;
use crate::init::{InitMode, NamedTensorMap};
use crate::model::OdVae;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub steps: u64,
    pub kl_weight: f32,
    pub ema_decay: f32,
    pub seed: u64,
    pub init_mode: InitMode,
    /// Validation reconstruction is measured at step 0, every `eval_every`
    /// steps and at the last step.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 1,
            steps: 500,
            kl_weight: 1e-6,
            ema_decay: 0.999,
            seed: 0,
            init_mode: InitMode::Random,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config("kl_weight must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// Where training batches come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(SyntheticDataset),
    /// Clips of shape `(1, 3, T, H, W)`, cycled in order.
    Clips(Vec<Tensor>),
}

impl DataSource {
    /// Batch number `index`.
    pub fn batch(&self, index: usize, size: usize) -> Result<Tensor> {
        match self {
            DataSource::Synthetic(ds) => ds.batch(index * size, size),
            DataSource::Clips(clips) => {
                if clips.is_empty() {
                    return Err(Error::Config("no training clips".into()));
                }
                let picked: Vec<Tensor> = (0..size)
                    .map(|i| clips[(index * size + i) % clips.len()].clone())
                    .collect();
                Tensor::concat_batch(&picked)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub recon: f32,
    pub kl: f32,
    pub ms: f32,
}

impl StepMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "step={} recon={} kl={} ms={}",
            self.step, self.recon, self.kl, self.ms
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    /// Mean L1 error of the clamped reconstruction over the validation clips.
    pub recon: f32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: OdVae,
    pub ema: EmaState,
    pub log: Vec<StepMetrics>,
    pub evals: Vec<EvalPoint>,
}

/// Steps whose loss exceeds this multiple of the first loss count as diverging.
const DIVERGENCE_FACTOR: f32 = 10.0;
/// Consecutive diverging steps that abort training.
const DIVERGENCE_PATIENCE: u32 = 100;

fn sample_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean L1 error of `model.reconstruct` over `clips`.
pub fn validation_recon(model: &OdVae, clips: &[Tensor]) -> Result<f32> {
    if clips.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for x in clips {
        let y = model.reconstruct(x)?;
        let err: f64 = y
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        total += err / x.numel() as f64;
    }
    Ok((total / clips.len() as f64) as f32)
}

/// One optimization step. Returns the loss terms measured before the update.
pub fn train_step(
    model: &mut OdVae,
    adam: &mut Adam,
    ema: &mut EmaState,
    objective: &Objective,
    batch: &Tensor,
    sample_seed: u64,
) -> Result<super::objective::LossBreakdown> {
    let mut tape = Tape::new();
    let pv = model.param_vars(&mut tape, true);
    let x = Var::constant(batch.clone());
    let (mean, logvar) = model.encode_on(&mut tape, &pv, &x)?;
    let z = sample_on_tape(&mut tape, &mean, &logvar, sample_seed)?;
    let x_hat = model.decode_on(&mut tape, &pv, &z)?;
    let (total, breakdown) = objective.evaluate(&mut tape, &x, &x_hat, &mean, &logvar)?;
    check_finite(&breakdown)?;
    let grads = tape.backward(&total)?;
    let mut named = IndexMap::new();
    for (name, var) in pv.iter() {
        let g = grads
            .get(var)
            .ok_or_else(|| Error::Autograd(format!("no gradient for {name}")))?;
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient for {name}")));
        }
        named.insert(name.clone(), g.clone());
    }
    drop(tape);
    let mut params = model.params().clone();
    adam.step(&mut params, &named)?;
    model.set_params(params)?;
    ema.update(model.params())?;
    Ok(breakdown)
}

/// Trains `model` for `config.steps` Adam steps. Batches are produced on a
/// separate thread; their order is fixed, so results do not depend on timing.
pub fn train_loop(
    mut model: OdVae,
    config: &TrainConfig,
    data: &DataSource,
    validation: &[Tensor],
    objective: &Objective,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut adam = Adam::new(config.learning_rate);
    let mut ema = EmaState::new(model.params(), config.ema_decay)?;
    let mut log = Vec::new();
    let mut evals = vec![EvalPoint {
        step: 0,
        recon: validation_recon(&model, validation)?,
    }];
    let steps = config.steps;
    let bs = config.batch_size;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Tensor>>(2);
        scope.spawn(move || {
            for i in 0..steps {
                if tx.send(data.batch(i as usize, bs)).is_err() {
                    break;
                }
            }
        });
        let mut first_total = None;
        let mut diverging = 0u32;
        for step in 1..=steps {
            let batch = rx
                .recv()
                .map_err(|_| Error::Training("data producer stopped early".into()))??;
            let started = Instant::now();
            let b = train_step(
                &mut model,
                &mut adam,
                &mut ema,
                objective,
                &batch,
                sample_seed(config.seed, step),
            )
            .map_err(|e| match e {
                Error::NonFinite { op } => {
                    Error::Training(format!("step {step}: non-finite value produced by {op}"))
                }
                Error::Training(msg) => Error::Training(format!("step {step}: {msg}")),
                other => other,
            })?;
            let m = StepMetrics {
                step,
                recon: b.recon,
                kl: b.kl,
                ms: started.elapsed().as_secs_f32() * 1e3,
            };
            on_step(&m);
            log.push(m);

            let first = *first_total.get_or_insert(b.total);
            if b.total > DIVERGENCE_FACTOR * first {
                diverging += 1;
                if diverging >= DIVERGENCE_PATIENCE {
                    return Err(Error::Training(format!(
                        "diverged: loss above {DIVERGENCE_FACTOR}x the initial {first} for {DIVERGENCE_PATIENCE} consecutive steps (now {})",
                        b.total
                    )));
                }
            } else {
                diverging = 0;
            }
            if step % config.eval_every == 0 || step == steps {
                evals.push(EvalPoint {
                    step,
                    recon: validation_recon(&model, validation)?,
                });
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        model,
        ema,
        log,
        evals,
    })
}

/// Paths written by [`save_outcome`] for a checkpoint path `out`.
pub fn outcome_paths(out: &Path) -> [PathBuf; 3] {
    let with = |suffix: &str| {
        let mut s = out.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    [out.to_path_buf(), with(".ema"), with(".log")]
}

/// Writes the live checkpoint to `out`, the EMA checkpoint to `<out>.ema` and
/// the metric log to `<out>.log`. `extra` entries are appended to both
/// checkpoints.
pub fn save_outcome(outcome: &TrainOutcome, out: &Path, extra: &NamedTensorMap) -> Result<()> {
    let [live, ema, log] = outcome_paths(out);
    let with_extra = |m: &NamedTensorMap| {
        let mut m = m.clone();
        m.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        m
    };
    save_checkpoint(&with_extra(outcome.model.params()), &live)?;
    save_checkpoint(&with_extra(&outcome.ema.shadow), &ema)?;
    let mut text = String::new();
    for m in &outcome.log {
        writeln!(text, "{}", m.log_line()).expect("writing to a String");
    }
    std::fs::write(&log, text).map_err(|e| Error::io(&log, e))
}
