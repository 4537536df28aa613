mod common;

use common::metric_suite;
use odvae::metrics::{psnr, ssim};
use odvae::Tensor;
use proptest::prelude::*;

fn uniform(shape: Vec<usize>, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, 0.0, 1.0, seed)
}

#[test]
fn identical_inputs_hit_the_caps() {
    metric_suite::identical_inputs_hit_the_caps();
}

#[test]
fn psnr_closed_forms() {
    metric_suite::psnr_closed_forms();
}

#[test]
fn psnr_averages_frames_then_videos() {
    metric_suite::psnr_averages_frames_then_videos();
}

#[test]
fn ssim_matches_direct_window_sum() {
    metric_suite::ssim_matches_direct_window_sum();
}

#[test]
fn independent_noise_is_uncorrelated() {
    metric_suite::independent_noise_is_uncorrelated();
}

#[test]
fn inverted_images_anti_correlate() {
    metric_suite::inverted_images_anti_correlate();
}

#[test]
fn errors() {
    metric_suite::errors();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn symmetric(seed in any::<u64>()) {
        let a = uniform(vec![1, 3, 2, 16, 16], seed);
        let b = uniform(vec![1, 3, 2, 16, 16], seed ^ 7);
        prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() <= 1e-6);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), base in 0.01f32..0.05) {
        let a = Tensor::full(vec![1, 3, 2, 16, 16], 0.5);
        let noise = Tensor::randn(vec![1, 3, 2, 16, 16], 0.0, 1.0, seed);
        let values: Vec<f64> = [base, 2.0 * base, 4.0 * base]
            .iter()
            .map(|&amp| {
                let b = a.zip_map(&noise, |x, n| (x + amp * n).clamp(0.0, 1.0)).unwrap();
                psnr(&a, &b).unwrap()
            })
            .collect();
        prop_assert!(values[0] > values[1] && values[1] > values[2], "{:?}", values);
    }
}
