use std::sync::Mutex;

use odvae::init::tail_init;
use odvae::tiling::{tiled_decode, tiled_encode, Execution, TemporalCodec, TilingPlan};
use odvae::{Error, LatentDistribution, OdVae, OdVaeConfig, Result, Tensor, Variant};
use proptest::prelude::*;

fn model(variant: Variant) -> OdVae {
    OdVae::build(&OdVaeConfig::toy(8, variant)).unwrap()
}

fn video(t: usize, seed: u64) -> Tensor {
    Tensor::rand_uniform(vec![1, 3, t, 16, 16], 0.0, 1.0, seed)
}

/// Shape-only codec recording the clip lengths it is handed.
#[derive(Default)]
struct Spy {
    encoded: Mutex<Vec<usize>>,
    decoded: Mutex<Vec<usize>>,
}

impl TemporalCodec for Spy {
    fn encode(&self, video: &Tensor) -> Result<LatentDistribution> {
        let [n, _, t, h, w] = video.dims5("spy")?;
        self.encoded.lock().unwrap().push(t);
        let shape = vec![n, 4, (t - 1) / 4 + 1, h / 8, w / 8];
        LatentDistribution::new(Tensor::zeros(shape.clone()), Tensor::zeros(shape))
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let [n, _, t, h, w] = latent.dims5("spy")?;
        self.decoded.lock().unwrap().push(t);
        Ok(Tensor::zeros(vec![n, 3, 4 * (t - 1) + 1, 8 * h, 8 * w]))
    }
}

#[test]
fn plan_examples() {
    let p = TilingPlan::new(97, 33).unwrap();
    assert_eq!(p.groups, vec![0..33, 32..65, 64..97]);
    assert_eq!(p.latent_group_len(), 9);
    assert_eq!(p.latent_groups(), vec![0..9, 8..17, 16..25]);
    let p = TilingPlan::new(9, 5).unwrap();
    assert_eq!(p.groups, vec![0..5, 4..9]);
    assert_eq!(TilingPlan::new(33, 33).unwrap().group_count(), 1);
    match TilingPlan::new(41, 33) {
        Err(Error::Length { got: 41, detail }) => {
            assert!(detail.contains("33, 65, 97"), "{detail}")
        }
        other => panic!("{other:?}"),
    }
    assert!(TilingPlan::new(9, 4).is_err());
    assert!(TilingPlan::new(9, 1).is_err());
}

#[test]
fn counts_match_untiled_formulas() {
    let spy = Spy::default();
    let x = Tensor::zeros(vec![1, 3, 97, 16, 16]);
    let plan = TilingPlan::new(97, 33).unwrap();
    let z = tiled_encode(&spy, &x, &plan, Execution::Sequential).unwrap();
    assert_eq!(z.mean.shape()[2], 25);
    assert_eq!(*spy.encoded.lock().unwrap(), vec![33, 33, 33]);
    let y = tiled_decode(&spy, &z.mean, &plan, Execution::Sequential).unwrap();
    assert_eq!(y.shape()[2], 97);
    assert_eq!(*spy.decoded.lock().unwrap(), vec![9, 9, 9]);
}

#[test]
fn real_model_conserves_lengths() {
    let m = model(Variant::V2);
    for (t, g) in [(9, 5), (33, 9), (97, 33)] {
        let plan = TilingPlan::new(t, g).unwrap();
        let x = video(t, t as u64);
        let z = tiled_encode(&m, &x, &plan, Execution::Sequential).unwrap();
        let untiled = m.encode(&x).unwrap();
        assert_eq!(z.mean.shape(), untiled.mean.shape());
        let y = tiled_decode(&m, &z.mean, &plan, Execution::Sequential).unwrap();
        assert_eq!(y.shape(), x.shape());
    }
}

#[test]
fn first_group_matches_untiled_encode() {
    for v in Variant::ALL {
        let m = model(v);
        for (t, g) in [(9, 5), (33, 9), (97, 33)] {
            let plan = TilingPlan::new(t, g).unwrap();
            let x = video(t, 1);
            let tiled = tiled_encode(&m, &x, &plan, Execution::Sequential)
                .unwrap()
                .mean;
            let full = m.encode(&x).unwrap().mean;
            let gl = plan.latent_group_len();
            let a = tiled.slice_time(0, gl).unwrap();
            let b = full.slice_time(0, gl).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-6, "{v} ({t},{g})");
        }
    }
}

#[test]
fn single_group_is_plain_call() {
    let m = model(Variant::V1);
    let x = video(9, 2);
    let plan = TilingPlan::new(9, 9).unwrap();
    let z = tiled_encode(&m, &x, &plan, Execution::Sequential).unwrap();
    let plain = m.encode(&x).unwrap();
    assert!(z.mean.bitwise_eq(&plain.mean) && z.logvar.bitwise_eq(&plain.logvar));
    let y = tiled_decode(&m, &z.mean, &plan, Execution::Sequential).unwrap();
    assert!(y.bitwise_eq(&m.decode(&plain.mean).unwrap()));
}

#[test]
fn tail_initialized_decode_ignores_grouping() {
    let cfg = OdVaeConfig::toy(8, Variant::V1);
    let twin = OdVae::build_image_twin(&cfg).unwrap();
    let mut m = OdVae::build(&cfg).unwrap();
    tail_init(&mut m, twin.params()).unwrap();
    let z = Tensor::randn(vec![1, 4, 9, 2, 2], 0.0, 1.0, 3);
    let plan = TilingPlan::for_latent(9, 3).unwrap();
    let tiled = tiled_decode(&m, &z, &plan, Execution::Sequential).unwrap();
    let plain = m.decode(&z).unwrap();
    assert!(tiled.max_abs_diff(&plain) <= 1e-5);
}

#[test]
fn parallel_matches_sequential() {
    let m = model(Variant::V3);
    let x = video(33, 4);
    let plan = TilingPlan::new(33, 9).unwrap();
    let s = tiled_encode(&m, &x, &plan, Execution::Sequential).unwrap();
    let p = tiled_encode(&m, &x, &plan, Execution::Parallel).unwrap();
    assert!(s.mean.bitwise_eq(&p.mean));
    let ds = tiled_decode(&m, &s.mean, &plan, Execution::Sequential).unwrap();
    let dp = tiled_decode(&m, &s.mean, &plan, Execution::Parallel).unwrap();
    assert!(ds.bitwise_eq(&dp));
}

#[test]
fn plan_mismatch_is_an_error() {
    let m = model(Variant::V1);
    let plan = TilingPlan::new(9, 5).unwrap();
    assert!(tiled_encode(&m, &video(13, 0), &plan, Execution::Sequential).is_err());
    let z = Tensor::zeros(vec![1, 4, 4, 2, 2]);
    assert!(tiled_decode(&m, &z, &plan, Execution::Sequential).is_err());
}

proptest! {
    #[test]
    fn lengths_are_conserved(k in 1usize..5, m in 1usize..6) {
        let g = 1 + 4 * k;
        let t = 1 + m * (g - 1);
        let plan = TilingPlan::new(t, g).unwrap();
        prop_assert_eq!(plan.group_count(), m);
        prop_assert_eq!(plan.reassembled_frames(), g + (m - 1) * (g - 1));
        for w in plan.groups.windows(2) {
            prop_assert_eq!(w[0].end - 1, w[1].start);
        }
        let spy = Spy::default();
        let x = Tensor::zeros(vec![1, 3, t, 8, 8]);
        let z = tiled_encode(&spy, &x, &plan, Execution::Sequential).unwrap();
        prop_assert_eq!(z.mean.shape()[2], (t - 1) / 4 + 1);
        let y = tiled_decode(&spy, &z.mean, &plan, Execution::Sequential).unwrap();
        prop_assert_eq!(y.shape()[2], t);
        prop_assert!(spy.encoded.lock().unwrap().iter().all(|&n| n <= g));
        prop_assert!(spy.decoded.lock().unwrap().iter().all(|&n| n <= plan.latent_group_len()));
    }
}
