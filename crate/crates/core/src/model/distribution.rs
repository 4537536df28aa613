use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower and upper clamp applied to the encoder's log-variance.
pub const LOGVAR_RANGE: (f32, f32) = (-30.0, 20.0);

/// Diagonal Gaussian over the latent grid `(N, c, t', h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mean: Tensor,
    pub logvar: Tensor,
}

impl LatentDistribution {
    pub fn new(mean: Tensor, logvar: Tensor) -> Result<Self> {
        if mean.shape() != logvar.shape() {
            return Err(Error::shape(
                "latent distribution",
                format!("mean {:?} vs logvar {:?}", mean.shape(), logvar.shape()),
            ));
        }
        let (lo, hi) = LOGVAR_RANGE;
        Ok(LatentDistribution {
            logvar: logvar.clamp(lo, hi),
            mean,
        })
    }

    pub fn mode(&self) -> &Tensor {
        &self.mean
    }

    /// `mean + exp(logvar / 2) * eps` with seeded standard normal `eps`.
    pub fn sample(&self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Tensor::randn_with(self.mean.shape().to_vec(), 0.0, 1.0, &mut rng);
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.logvar.data())
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
            .collect();
        Tensor::new(self.mean.shape().to_vec(), data).expect("same shape as mean")
    }

    /// KL divergence to the standard normal, summed over the latent grid and
    /// averaged over the batch.
    pub fn kl(&self) -> f64 {
        let total: f64 = self
            .mean
            .data()
            .iter()
            .zip(self.logvar.data())
            .map(|(&m, &lv)| {
                let (m, lv) = (m as f64, lv as f64);
                0.5 * (m * m + lv.exp() - 1.0 - lv)
            })
            .sum();
        total / self.mean.shape()[0] as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_forms() {
        let zero =
            LatentDistribution::new(Tensor::zeros(vec![1, 4]), Tensor::zeros(vec![1, 4])).unwrap();
        assert_eq!(zero.kl(), 0.0);
        let one =
            LatentDistribution::new(Tensor::ones(vec![1, 1]), Tensor::zeros(vec![1, 1])).unwrap();
        assert!((one.kl() - 0.5).abs() < 1e-12);
        let batch =
            LatentDistribution::new(Tensor::ones(vec![2, 1]), Tensor::zeros(vec![2, 1])).unwrap();
        assert!((batch.kl() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_variance_sample_is_mean() {
        let mean = Tensor::randn(vec![1, 4, 2, 3, 3], 0.0, 1.0, 1);
        let d =
            LatentDistribution::new(mean.clone(), Tensor::full(vec![1, 4, 2, 3, 3], -1e4)).unwrap();
        assert_eq!(d.logvar.data()[0], -30.0);
        assert!(d.sample(9).max_abs_diff(&mean) < 1e-5);
    }

    #[test]
    fn sampling_is_seeded() {
        let d =
            LatentDistribution::new(Tensor::zeros(vec![1, 8]), Tensor::zeros(vec![1, 8])).unwrap();
        assert!(d.sample(3).bitwise_eq(&d.sample(3)));
        assert!(!d.sample(3).bitwise_eq(&d.sample(4)));
    }
}
