use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::OdVae;
use crate::tensor::Tensor;

/// An additional weighted term of the training objective, computed from the
/// input clip and its reconstruction.
pub trait LossTerm: Send + Sync {
    fn name(&self) -> &str;
    fn weight(&self) -> f32;
    fn compute(&self, tape: &mut Tape, input: &Var, reconstruction: &Var) -> Result<Var>;
}

/// Mean squared error, mostly useful as an example of an extra term.
pub struct MseTerm {
    pub weight: f32,
}

impl LossTerm for MseTerm {
    fn name(&self) -> &str {
        "mse"
    }

    fn weight(&self) -> f32 {
        self.weight
    }

    fn compute(&self, tape: &mut Tape, input: &Var, reconstruction: &Var) -> Result<Var> {
        tape.mse_loss(reconstruction, input)
    }
}

/// L1 reconstruction plus weighted KL plus any registered terms.
pub struct Objective {
    pub kl_weight: f32,
    pub extra: Vec<Box<dyn LossTerm>>,
}

impl Objective {
    pub fn new(kl_weight: f32) -> Self {
        Objective {
            kl_weight,
            extra: Vec::new(),
        }
    }

    pub fn with_term(mut self, term: impl LossTerm + 'static) -> Self {
        self.extra.push(Box::new(term));
        self
    }

    /// Combines the terms for one batch. `mean`/`logvar` describe the
    /// posterior the reconstruction was decoded from.
    pub fn evaluate(
        &self,
        tape: &mut Tape,
        input: &Var,
        reconstruction: &Var,
        mean: &Var,
        logvar: &Var,
    ) -> Result<(Var, LossBreakdown)> {
        let recon = tape.l1_loss(reconstruction, input)?;
        let kl = kl_on_tape(tape, mean, logvar)?;
        let weighted_kl = tape.scale(&kl, self.kl_weight)?;
        let mut total = tape.add(&recon, &weighted_kl)?;
        let mut extra = Vec::new();
        for term in &self.extra {
            let v = term.compute(tape, input, reconstruction)?;
            extra.push((term.name().to_string(), v.value().item()));
            let w = tape.scale(&v, term.weight())?;
            total = tape.add(&total, &w)?;
        }
        let breakdown = LossBreakdown {
            total: total.value().item(),
            recon: recon.value().item(),
            kl: kl.value().item(),
            extra,
        };
        Ok((total, breakdown))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f32,
    pub recon: f32,
    pub kl: f32,
    pub extra: Vec<(String, f32)>,
}

/// `mean + exp(logvar / 2) * eps` with `eps` a constant seeded normal draw.
pub fn sample_on_tape(tape: &mut Tape, mean: &Var, logvar: &Var, seed: u64) -> Result<Var> {
    let eps = Var::constant(Tensor::randn(mean.shape().to_vec(), 0.0, 1.0, seed));
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(&half)?;
    let noise = tape.mul(&std, &eps)?;
    tape.add(mean, &noise)
}

/// `0.5 * sum(mean^2 + exp(logvar) - 1 - logvar)` divided by the batch size.
pub fn kl_on_tape(tape: &mut Tape, mean: &Var, logvar: &Var) -> Result<Var> {
    let n = mean.shape()[0] as f32;
    let numel = mean.value().numel() as f32;
    let m2 = tape.mul(mean, mean)?;
    let var = tape.exp(logvar)?;
    let a = tape.add(&m2, &var)?;
    let b = tape.sub(&a, logvar)?;
    let s = tape.sum(&b)?;
    let s = tape.add_scalar(&s, -numel)?;
    tape.scale(&s, 0.5 / n)
}

/// Loss of `model` on `batch` without recording gradients.
pub fn loss(
    model: &OdVae,
    objective: &Objective,
    batch: &Tensor,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::inference();
    let pv = model.param_vars(&mut tape, false);
    let x = Var::constant(batch.clone());
    let (mean, logvar) = model.encode_on(&mut tape, &pv, &x)?;
    let z = sample_on_tape(&mut tape, &mean, &logvar, seed)?;
    let x_hat = model.decode_on(&mut tape, &pv, &z)?;
    let (_, breakdown) = objective.evaluate(&mut tape, &x, &x_hat, &mean, &logvar)?;
    check_finite(&breakdown)?;
    Ok(breakdown)
}

pub(crate) fn check_finite(b: &LossBreakdown) -> Result<()> {
    if b.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!(
            "non-finite loss (recon={}, kl={})",
            b.recon, b.kl
        )))
    }
}
