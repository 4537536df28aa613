use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::init::NamedTensorMap;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: IndexMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has a gradient in `grads`.
    pub fn step(
        &mut self,
        params: &mut NamedTensorMap,
        grads: &IndexMap<String, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient {:?} for parameter {name} {:?}",
                        g.shape(),
                        p.shape()
                    ),
                ));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.numel()], vec![0.0; p.numel()]));
            let mut data = p.to_vec();
            for (((w, &gi), mi), vi) in data
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi as f64 / bc1;
                let v_hat = *vi as f64 / bc2;
                *w -= (self.lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
            }
            *p = Tensor::new(p.shape().to_vec(), data)?;
        }
        Ok(())
    }
}

/// Exponential moving average of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub decay: f32,
    pub shadow: NamedTensorMap,
}

impl EmaState {
    pub fn new(params: &NamedTensorMap, decay: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!(
                "ema decay must lie in [0, 1), got {decay}"
            )));
        }
        Ok(EmaState {
            decay,
            shadow: params.clone(),
        })
    }

    /// `shadow <- decay * shadow + (1 - decay) * param`
    pub fn update(&mut self, params: &NamedTensorMap) -> Result<()> {
        let d = self.decay;
        for (name, s) in self.shadow.iter_mut() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("ema: parameter {name} vanished")))?;
            *s = s.zip_map(p, |s, p| d * s + (1.0 - d) * p)?;
        }
        Ok(())
    }
}
