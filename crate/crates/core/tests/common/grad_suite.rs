//! Central finite-difference checks for every differentiable primitive.

use super::{grad_check, spread, FD_TOL};
use odvae::autograd::{Tape, Var};
use odvae::causal::{
    causal_conv3d, causal_temporal_downsample, causal_temporal_upsample, temporal_downsample_spec,
    CausalConv3dSpec,
};
use odvae::conv::ConvGeometry;
use odvae::training::{kl_on_tape, sample_on_tape};
use odvae::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 5;
const MAX_ELEMS: usize = 64;

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6EAD ^ tag)
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Random shape of rank 1..=4 with at most `MAX_ELEMS` elements.
fn any_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let rank = r.random_range(1..=4);
        let s: Vec<usize> = (0..rank).map(|_| r.random_range(1..=4)).collect();
        if numel(&s) <= MAX_ELEMS {
            return s;
        }
    }
}

fn shape5(r: &mut ChaCha8Rng, c: std::ops::RangeInclusive<usize>, min_t: usize) -> Vec<usize> {
    loop {
        let s = vec![
            r.random_range(1..=2),
            r.random_range(c.clone()),
            r.random_range(min_t..=4),
            r.random_range(1..=4),
            r.random_range(1..=4),
        ];
        if numel(&s) <= MAX_ELEMS {
            return s;
        }
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, seed)
}

fn assert_all(
    name: &str,
    tag: u64,
    mut case: impl FnMut(
        &mut ChaCha8Rng,
        u64,
    ) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>),
) {
    let mut r = rng(tag);
    for i in 0..CASES {
        let (inputs, f) = case(&mut r, tag * 100 + i);
        for t in &inputs {
            assert!(t.numel() <= MAX_ELEMS, "{name}: input too large");
        }
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        let err = grad_check(&inputs, tag * 100 + i, f);
        assert!(
            err <= FD_TOL,
            "{name} case {i} shapes {shapes:?}: relative error {err:e}"
        );
    }
}

pub fn elementwise_binary() {
    assert_all("add", 1, |r, s| {
        let sh = any_shape(r);
        (
            vec![randn(&sh, s), randn(&sh, s + 1)],
            Box::new(|t, v| t.add(&v[0], &v[1])),
        )
    });
    assert_all("sub", 2, |r, s| {
        let sh = any_shape(r);
        (
            vec![randn(&sh, s), randn(&sh, s + 1)],
            Box::new(|t, v| t.sub(&v[0], &v[1])),
        )
    });
    assert_all("mul", 3, |r, s| {
        let sh = any_shape(r);
        (
            vec![randn(&sh, s), randn(&sh, s + 1)],
            Box::new(|t, v| t.mul(&v[0], &v[1])),
        )
    });
}

pub fn elementwise_unary() {
    assert_all("scale", 4, |r, s| {
        let sh = any_shape(r);
        let k = r.random_range(-2.0f32..2.0);
        (vec![randn(&sh, s)], Box::new(move |t, v| t.scale(&v[0], k)))
    });
    assert_all("add_scalar", 5, |r, s| {
        let sh = any_shape(r);
        let k = r.random_range(-2.0f32..2.0);
        (
            vec![randn(&sh, s)],
            Box::new(move |t, v| t.add_scalar(&v[0], k)),
        )
    });
    assert_all("silu", 6, |r, s| {
        let sh = any_shape(r);
        (vec![randn(&sh, s)], Box::new(|t, v| t.silu(&v[0])))
    });
    assert_all("exp", 7, |r, s| {
        let sh = any_shape(r);
        (
            vec![Tensor::rand_uniform(sh, -2.0, 2.0, s)],
            Box::new(|t, v| t.exp(&v[0])),
        )
    });
    assert_all("clamp", 8, |r, s| {
        let sh = any_shape(r);
        // keep every entry away from the kinks at the bounds
        let x = Tensor::randn(sh, 0.0, 1.0, s).map(|v| {
            if (v.abs() - 0.5).abs() < 0.01 {
                v * 1.1
            } else {
                v
            }
        });
        (vec![x], Box::new(|t, v| t.clamp(&v[0], -0.5, 0.5)))
    });
}

pub fn reductions_and_losses() {
    assert_all("sum", 9, |r, s| {
        let sh = any_shape(r);
        (vec![randn(&sh, s)], Box::new(|t, v| t.sum(&v[0])))
    });
    assert_all("mean", 10, |r, s| {
        let sh = any_shape(r);
        (vec![randn(&sh, s)], Box::new(|t, v| t.mean(&v[0])))
    });
    assert_all("l1_loss", 11, |r, s| {
        let sh = any_shape(r);
        let a = randn(&sh, s);
        // differences bounded away from zero
        let d = spread(sh, -1.0, 1.0, s).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 });
        let b = a.zip_map(&d, |x, y| x + y).unwrap();
        (vec![a, b], Box::new(|t, v| t.l1_loss(&v[0], &v[1])))
    });
    assert_all("mse_loss", 12, |r, s| {
        let sh = any_shape(r);
        (
            vec![randn(&sh, s), randn(&sh, s + 1)],
            Box::new(|t, v| t.mse_loss(&v[0], &v[1])),
        )
    });
}

pub fn conv3d_gradients() {
    assert_all("conv3d", 13, |r, s| loop {
        let x = shape5(r, 1..=2, 1);
        let co = r.random_range(1..=2);
        let k = [
            r.random_range(1..=3),
            r.random_range(1..=3),
            r.random_range(1..=3),
        ];
        let stride = [
            r.random_range(1..=2),
            r.random_range(1..=2),
            r.random_range(1..=2),
        ];
        let pad_t = [r.random_range(0..=2), r.random_range(0..=1)];
        let pad_hw = [r.random_range(0..=1), r.random_range(0..=1)];
        let w = vec![co, x[1], k[0], k[1], k[2]];
        if numel(&w) > MAX_ELEMS
            || x[2] + pad_t[0] + pad_t[1] < k[0]
            || x[3] + 2 * pad_hw[0] < k[1]
            || x[4] + 2 * pad_hw[1] < k[2]
        {
            continue;
        }
        let geom = ConvGeometry::new(stride, pad_t, pad_hw);
        break (
            vec![randn(&x, s), randn(&w, s + 1), randn(&[co], s + 2)],
            Box::new(move |t: &mut Tape, v: &[Var]| t.conv3d(&v[0], &v[1], Some(&v[2]), geom)),
        );
    });
}

pub fn conv2d_gradients() {
    assert_all("conv2d", 14, |r, s| loop {
        let rank5 = r.random_bool(0.5);
        let x = if rank5 {
            shape5(r, 1..=2, 1)
        } else {
            let s5 = shape5(r, 1..=3, 1);
            vec![s5[0], s5[1], s5[3], s5[4]]
        };
        let (h, w) = (x[x.len() - 2], x[x.len() - 1]);
        let co = r.random_range(1..=2);
        let (kh, kw) = (r.random_range(1..=3), r.random_range(1..=3));
        let stride = [r.random_range(1..=2), r.random_range(1..=2)];
        let pad = [r.random_range(0..=1), r.random_range(0..=1)];
        if h + 2 * pad[0] < kh || w + 2 * pad[1] < kw {
            continue;
        }
        let k = vec![co, x[1], kh, kw];
        break (
            vec![randn(&x, s), randn(&k, s + 1), randn(&[co], s + 2)],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                t.conv2d(&v[0], &v[1], Some(&v[2]), stride, pad)
            }),
        );
    });
}

pub fn group_norm_gradients() {
    assert_all("group_norm", 15, |r, s| loop {
        let x = shape5(r, 1..=4, 1);
        let c = x[1];
        let divisors: Vec<usize> = (1..=c).filter(|g| c.is_multiple_of(*g)).collect();
        let groups = divisors[r.random_range(0..divisors.len())];
        // with two values per group the output saturates at +-1 and the
        // input gradient is of order eps
        if (c / groups) * x[3] * x[4] < 4 {
            continue;
        }
        break (
            vec![randn(&x, s), randn(&[c], s + 1), randn(&[c], s + 2)],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                t.group_norm(&v[0], groups, &v[1], &v[2], 1e-6)
            }),
        );
    });
}

pub fn layout_ops() {
    assert_all("reshape", 16, |r, s| {
        let sh = any_shape(r);
        let flat = vec![numel(&sh)];
        (
            vec![randn(&sh, s)],
            Box::new(move |t, v| t.reshape(&v[0], flat.clone())),
        )
    });
    assert_all("permute", 17, |r, s| {
        use rand::seq::SliceRandom;
        let sh = any_shape(r);
        let mut perm: Vec<usize> = (0..sh.len()).collect();
        perm.shuffle(r);
        (
            vec![randn(&sh, s)],
            Box::new(move |t, v| t.permute(&v[0], &perm)),
        )
    });
    assert_all("pad_time_replicate", 18, |r, s| {
        let sh = shape5(r, 1..=2, 1);
        let pad = r.random_range(1..=3);
        (
            vec![randn(&sh, s)],
            Box::new(move |t, v| t.pad_time_replicate(&v[0], pad)),
        )
    });
    assert_all("repeat_frames_causal", 19, |r, s| {
        let sh = shape5(r, 1..=2, 1);
        (
            vec![randn(&sh, s)],
            Box::new(|t, v| t.repeat_frames_causal(&v[0])),
        )
    });
    assert_all("upsample_nearest2", 20, |r, s| {
        let sh = shape5(r, 1..=2, 1);
        (
            vec![randn(&sh, s)],
            Box::new(|t, v| t.upsample_nearest2(&v[0])),
        )
    });
    assert_all("narrow_channels", 21, |r, s| {
        let sh = shape5(r, 2..=4, 1);
        let len = r.random_range(1..=sh[1] - 1);
        let start = r.random_range(0..=sh[1] - len);
        (
            vec![randn(&sh, s)],
            Box::new(move |t, v| t.narrow_channels(&v[0], start, len)),
        )
    });
}

pub fn matmul_and_softmax() {
    assert_all("matmul", 22, |r, s| {
        let (b, m, k, n) = (
            r.random_range(1..=2),
            r.random_range(1..=4),
            r.random_range(1..=4),
            r.random_range(1..=4),
        );
        (
            vec![randn(&[b, m, k], s), randn(&[b, k, n], s + 1)],
            Box::new(|t, v| t.matmul(&v[0], &v[1])),
        )
    });
    assert_all("softmax", 23, |r, s| {
        let sh = any_shape(r);
        (vec![randn(&sh, s)], Box::new(|t, v| t.softmax(&v[0])))
    });
}

pub fn causal_composites() {
    assert_all("causal_conv3d", 24, |r, s| {
        let x = shape5(r, 1..=2, 1);
        let spec = CausalConv3dSpec::new(x[1], r.random_range(1..=2), [3, 1, 3], [1, 1, 1]);
        let w = spec.weight_shape().to_vec();
        (
            vec![randn(&x, s), Tensor::randn(w, 0.0, 0.5, s + 1)],
            Box::new(move |t: &mut Tape, v: &[Var]| causal_conv3d(t, &v[0], &spec, &v[1], None)),
        )
    });
    assert_all("causal_temporal_downsample", 25, |r, s| {
        let t = [1, 3, 5][r.random_range(0..3)];
        let x = vec![1, 1, t, r.random_range(2..=3), r.random_range(2..=3)];
        let spec = temporal_downsample_spec(1, r.random_range(1..=2));
        let w = spec.weight_shape().to_vec();
        (
            vec![randn(&x, s), Tensor::randn(w, 0.0, 0.5, s + 1)],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                causal_temporal_downsample(t, &v[0], &spec, &v[1], None)
            }),
        )
    });
    assert_all("causal_temporal_upsample", 26, |r, s| {
        let x = vec![1, 1, r.random_range(1..=3), r.random_range(1..=3), 2];
        let spec = CausalConv3dSpec::new(1, 1, [3, 3, 3], [1, 1, 1]);
        let w = spec.weight_shape().to_vec();
        (
            vec![randn(&x, s), Tensor::randn(w, 0.0, 0.5, s + 1)],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                causal_temporal_upsample(t, &v[0], &spec, &v[1], None)
            }),
        )
    });
}

/// The KL scalar sums ~64 terms of order one, so f32 rounding of the output
/// swamps a finite difference at h = 1e-3. Its gradient has a closed form.
pub fn kl_gradient_matches_closed_form() {
    let mut r = rng(27);
    for i in 0..CASES {
        let sh = shape5(&mut r, 1..=2, 1);
        let n = sh[0] as f32;
        let m = randn(&sh, i);
        let lv = Tensor::rand_uniform(sh, -1.0, 1.0, i + 1);
        let mut tape = Tape::new();
        let (mv, lvv) = (tape.leaf(m.clone()), tape.leaf(lv.clone()));
        let kl = kl_on_tape(&mut tape, &mv, &lvv).unwrap();
        let g = tape.backward(&kl).unwrap();
        let dm = m.map(|x| x / n);
        let dlv = lv.map(|x| 0.5 * (x.exp() - 1.0) / n);
        assert!(g.get(&mv).unwrap().max_abs_diff(&dm) <= 1e-6);
        assert!(g.get(&lvv).unwrap().max_abs_diff(&dlv) <= 1e-6);
    }
}

pub fn posterior_sample() {
    assert_all("sample", 28, |r, s| {
        let sh = shape5(r, 1..=2, 1);
        (
            vec![randn(&sh, s), Tensor::rand_uniform(sh, -1.0, 1.0, s + 1)],
            Box::new(move |t, v| sample_on_tape(t, &v[0], &v[1], s)),
        )
    });
}

pub const ALL: &[(&str, fn())] = &[
    ("elementwise_binary", elementwise_binary),
    ("elementwise_unary", elementwise_unary),
    ("reductions_and_losses", reductions_and_losses),
    ("conv3d_gradients", conv3d_gradients),
    ("conv2d_gradients", conv2d_gradients),
    ("group_norm_gradients", group_norm_gradients),
    ("layout_ops", layout_ops),
    ("matmul_and_softmax", matmul_and_softmax),
    ("causal_composites", causal_composites),
    (
        "kl_gradient_matches_closed_form",
        kl_gradient_matches_closed_form,
    ),
    ("posterior_sample", posterior_sample),
];
