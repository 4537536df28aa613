use odvae::metrics::{psnr, psnr_per_video, ssim, ssim_per_video, PSNR_CAP};
use odvae::{Error, Tensor};

fn uniform(shape: Vec<usize>, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, 0.0, 1.0, seed)
}

/// SSIM of one plane with a full 2D Gaussian window, summed directly.
fn ssim_plane_direct(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let k = 11;
    let sigma = 1.5f64;
    let mut win = vec![0.0f64; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            win[y * k + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.0001f64, 0.0009f64);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let g = win[y * k + x];
                    let va = a[(y0 + y) * w + x0 + x] as f64;
                    let vb = b[(y0 + y) * w + x0 + x] as f64;
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn identical_inputs_hit_the_caps() {
    let a = uniform(vec![2, 3, 3, 16, 16], 1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert_eq!(PSNR_CAP, 100.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

pub fn psnr_closed_forms() {
    let zeros = Tensor::zeros(vec![1, 3, 2, 8, 8]);
    let ones = Tensor::ones(vec![1, 3, 2, 8, 8]);
    assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    // |a - b| = 0.1 everywhere, alternating sign
    let a = Tensor::full(vec![1, 3, 2, 8, 8], 0.5);
    let b = Tensor::new(
        vec![1, 3, 2, 8, 8],
        (0..384)
            .map(|i| if i % 2 == 0 { 0.4 } else { 0.6 })
            .collect(),
    )
    .unwrap();
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / 384.0;
    assert!((mse - 0.01).abs() < 1e-8);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
}

pub fn psnr_averages_frames_then_videos() {
    let a = Tensor::zeros(vec![2, 1, 2, 4, 4]);
    let mut data = vec![0.0; 64];
    // video 0: frame 0 identical, frame 1 all ones; video 1: both frames at 0.1
    data[16..32].fill(1.0);
    data[32..64].fill(0.1);
    let b = Tensor::new(vec![2, 1, 2, 4, 4], data).unwrap();
    let v = psnr_per_video(&a, &b).unwrap();
    assert_eq!(v[0], (PSNR_CAP + 0.0) / 2.0);
    assert!((v[1] - 20.0).abs() < 1e-5);
    assert!((psnr(&a, &b).unwrap() - (v[0] + v[1]) / 2.0).abs() < 1e-12);
}

pub fn ssim_matches_direct_window_sum() {
    let a = uniform(vec![1, 3, 2, 20, 17], 2);
    let noise = Tensor::randn(vec![1, 3, 2, 20, 17], 0.0, 0.1, 3);
    let b = a.zip_map(&noise, |x, n| (x + n).clamp(0.0, 1.0)).unwrap();
    let plane = 20 * 17;
    let mut expected = 0.0;
    for p in 0..6 {
        let r = p * plane..(p + 1) * plane;
        expected += ssim_plane_direct(&a.data()[r.clone()], &b.data()[r], 20, 17);
    }
    expected /= 6.0;
    let got = ssim_per_video(&a, &b).unwrap()[0];
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

pub fn independent_noise_is_uncorrelated() {
    let a = uniform(vec![1, 3, 1, 64, 64], 10);
    let b = uniform(vec![1, 3, 1, 64, 64], 11);
    let s = ssim(&a, &b).unwrap();
    assert!(s.abs() < 0.1, "{s}");
}

pub fn inverted_images_anti_correlate() {
    // values kept away from mid-gray
    let a =
        uniform(vec![1, 3, 2, 32, 32], 12).map(|v| if v < 0.5 { v * 0.8 } else { 0.2 + v * 0.8 });
    let b = a.map(|v| 1.0 - v);
    let s = ssim(&a, &b).unwrap();
    assert!(s < 0.0, "{s}");
}

pub fn errors() {
    let a = Tensor::zeros(vec![1, 3, 1, 16, 16]);
    let b = Tensor::zeros(vec![1, 3, 1, 16, 8]);
    assert!(matches!(psnr(&a, &b), Err(Error::Shape { .. })));
    assert!(matches!(ssim(&a, &b), Err(Error::Shape { .. })));
    let small = Tensor::zeros(vec![1, 3, 1, 10, 16]);
    assert!(matches!(ssim(&small, &small), Err(Error::Shape { .. })));
}

pub const ALL: &[(&str, fn())] = &[
    (
        "identical_inputs_hit_the_caps",
        identical_inputs_hit_the_caps,
    ),
    ("psnr_closed_forms", psnr_closed_forms),
    (
        "psnr_averages_frames_then_videos",
        psnr_averages_frames_then_videos,
    ),
    (
        "ssim_matches_direct_window_sum",
        ssim_matches_direct_window_sum,
    ),
    (
        "independent_noise_is_uncorrelated",
        independent_noise_is_uncorrelated,
    ),
    (
        "inverted_images_anti_correlate",
        inverted_images_anti_correlate,
    ),
    ("errors", errors),
];
