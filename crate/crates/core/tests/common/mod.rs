#![allow(dead_code)]

pub mod format_suite;
pub mod grad_suite;
pub mod metric_suite;

use odvae::autograd::{Tape, Var};
use odvae::{Result, Tensor};

pub const FD_STEP: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

/// `max|a - n| / max(max|a|, max|n|)`, zero when both are zero.
pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .map(|a| a.abs() as f64)
        .chain(numeric.iter().map(|n| n.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn projection(y: &Tensor, weights: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(weights.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Worst relative error of [`grad_check_each`] over all inputs.
pub fn grad_check(
    inputs: &[Tensor],
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    grad_check_each(inputs, seed, f)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Checks the gradient of `<f(inputs), r>` for a fixed random `r` against
/// central differences. Returns one relative error per input.
pub fn grad_check_each(
    inputs: &[Tensor],
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Vec<f64> {
    let probe = {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
        f(&mut tape, &vars).unwrap().into_value()
    };
    let r = Tensor::randn(probe.shape().to_vec(), 0.0, 1.0, seed ^ 0xABCD);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &vars).unwrap();
    let rv = Var::constant(r.clone());
    let prod = tape.mul(&y, &rv).unwrap();
    let loss = tape.sum(&prod).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = xs.iter().cloned().map(Var::constant).collect();
        projection(f(&mut tape, &vars).unwrap().value(), &r)
    };

    let mut errors = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(v).expect("leaf gradient").to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].numel() {
            let mut shifted = inputs.to_vec();
            let mut plus = inputs[i].to_vec();
            plus[j] += FD_STEP;
            shifted[i] = Tensor::new(inputs[i].shape().to_vec(), plus).unwrap();
            let fp = eval(&shifted);
            let mut minus = inputs[i].to_vec();
            minus[j] -= FD_STEP;
            shifted[i] = Tensor::new(inputs[i].shape().to_vec(), minus).unwrap();
            let fm = eval(&shifted);
            numeric.push((fp - fm) / (2.0 * FD_STEP as f64));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    errors
}

/// Values in `[lo, hi]` on a regular grid, shuffled deterministically, so
/// that no two entries are closer than the finite-difference step.
pub fn spread(shape: Vec<usize>, lo: f32, hi: f32, seed: u64) -> Tensor {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n: usize = shape.iter().product();
    let step = if n > 1 {
        (hi - lo) / (n - 1) as f32
    } else {
        0.0
    };
    let mut v: Vec<f32> = (0..n).map(|i| lo + step * i as f32).collect();
    v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    Tensor::new(shape, v).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}
