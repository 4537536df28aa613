//! Temporally causal building blocks.
//!
//! A causal convolution pads the front of the clip with copies of frame 0
//! and never pads the back, so output frame `t` only sees input frames
//! `<= t`. With temporal stride 2 the frame counts follow `1 + 2m -> 1 + m`,
//! keeping the first frame as a frame of its own at every level.

use crate::autograd::{Tape, Var};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};

/// Geometry of one causal 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CausalConv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (Kt, Kh, Kw)
    pub kernel: [usize; 3],
    /// (st, sh, sw)
    pub stride: [usize; 3],
}

impl CausalConv3dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
    ) -> Self {
        CausalConv3dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kt, kh, kw]
    }

    /// Zero padding applied after the causal front padding: none in time,
    /// "same" in space.
    pub fn geometry(&self) -> ConvGeometry {
        let [_, kh, kw] = self.kernel;
        ConvGeometry::new(self.stride, [0, 0], [(kh - 1) / 2, (kw - 1) / 2])
    }

    /// `floor((T - 1) / st) + 1`
    pub fn output_frames(&self, t: usize) -> usize {
        (t - 1) / self.stride[0] + 1
    }
}

/// Prepends `pad_t` copies of frame 0.
pub fn causal_pad(tape: &mut Tape, x: &Var, pad_t: usize) -> Result<Var> {
    tape.pad_time_replicate(x, pad_t)
}

pub fn causal_conv3d(
    tape: &mut Tape,
    x: &Var,
    spec: &CausalConv3dSpec,
    weight: &Var,
    bias: Option<&Var>,
) -> Result<Var> {
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "causal_conv3d",
            format!(
                "weight {:?} does not match spec {:?}",
                weight.shape(),
                spec.weight_shape()
            ),
        ));
    }
    let padded = causal_pad(tape, x, spec.kernel[0] - 1)?;
    tape.conv3d(&padded, weight, bias, spec.geometry())
}

/// Spec of the strided causal convolution that halves the frame rate.
pub fn temporal_downsample_spec(channels: usize, spatial_stride: usize) -> CausalConv3dSpec {
    CausalConv3dSpec::new(
        channels,
        channels,
        [3, 3, 3],
        [2, spatial_stride, spatial_stride],
    )
}

/// Maps `1 + 2m` frames to `1 + m`. Output frame 0 depends only on input frame 0.
pub fn causal_temporal_downsample(
    tape: &mut Tape,
    x: &Var,
    spec: &CausalConv3dSpec,
    weight: &Var,
    bias: Option<&Var>,
) -> Result<Var> {
    let t = x.value().dims5("causal_temporal_downsample")?[2];
    if t % 2 == 0 {
        return Err(Error::Length {
            got: t,
            detail: "temporal downsampling needs an odd frame count 1 + 2m".into(),
        });
    }
    if spec.stride[0] != 2 || spec.kernel[0] != 3 {
        return Err(Error::Config(
            "temporal downsampling uses Kt = 3 with temporal stride 2".into(),
        ));
    }
    causal_conv3d(tape, x, spec, weight, bias)
}

/// Maps `1 + m` frames to `1 + 2m`: frame 0 once, later frames twice, then a
/// stride-1 causal convolution.
pub fn causal_temporal_upsample(
    tape: &mut Tape,
    x: &Var,
    spec: &CausalConv3dSpec,
    weight: &Var,
    bias: Option<&Var>,
) -> Result<Var> {
    if spec.stride[0] != 1 {
        return Err(Error::Config(
            "the smoothing convolution after temporal upsampling has stride 1".into(),
        ));
    }
    let repeated = tape.repeat_frames_causal(x)?;
    causal_conv3d(tape, &repeated, spec, weight, bias)
}

/// Frame count after `levels` causal temporal halvings.
pub fn downsampled_frames(t: usize, levels: u32) -> usize {
    (0..levels).fold(t, |t, _| (t - 1) / 2 + 1)
}

/// Frame count after `levels` causal temporal doublings.
pub fn upsampled_frames(t: usize, levels: u32) -> usize {
    (0..levels).fold(t, |t, _| 2 * t - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn frames(values: &[f32]) -> Var {
        Var::constant(Tensor::new(vec![1, 1, values.len(), 1, 1], values.to_vec()).unwrap())
    }

    #[test]
    fn pad_examples() {
        let mut tape = Tape::inference();
        let x = frames(&[1.0, 2.0, 3.0]);
        let y = causal_pad(&mut tape, &x, 2).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0, 1.0, 2.0, 3.0]);
        let same = causal_pad(&mut tape, &x, 0).unwrap();
        assert!(same.value().bitwise_eq(x.value()));
        let single = causal_pad(&mut tape, &frames(&[4.0]), 2).unwrap();
        assert_eq!(single.value().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn length_algebra() {
        let spec = temporal_downsample_spec(1, 1);
        assert_eq!(spec.output_frames(25), 13);
        assert_eq!(downsampled_frames(25, 2), 7);
        assert_eq!(downsampled_frames(81, 2), 21);
        assert_eq!(downsampled_frames(1, 2), 1);
        assert_eq!(upsampled_frames(7, 1), 13);
        assert_eq!(upsampled_frames(7, 2), 25);
        assert_eq!(upsampled_frames(1, 2), 1);
        for k in 0..=8 {
            assert_eq!(downsampled_frames(1 + 4 * k, 2), 1 + k);
            assert_eq!(upsampled_frames(1 + k, 2), 1 + 4 * k);
        }
    }

    #[test]
    fn downsample_output_lengths_match_formula() {
        let mut tape = Tape::inference();
        let spec = temporal_downsample_spec(2, 1);
        let w = Var::constant(Tensor::randn(spec.weight_shape().to_vec(), 0.0, 0.2, 1));
        for m in 0..5 {
            let t = 1 + 2 * m;
            let x = Var::constant(Tensor::randn(vec![1, 2, t, 3, 3], 0.0, 1.0, m as u64));
            let y = causal_temporal_downsample(&mut tape, &x, &spec, &w, None).unwrap();
            assert_eq!(y.shape()[2], 1 + m);
        }
        let even = Var::constant(Tensor::zeros(vec![1, 2, 4, 3, 3]));
        assert!(matches!(
            causal_temporal_downsample(&mut tape, &even, &spec, &w, None),
            Err(Error::Length { got: 4, .. })
        ));
    }

    #[test]
    fn upsample_repeats_then_smooths() {
        let mut tape = Tape::inference();
        let spec = CausalConv3dSpec::new(1, 1, [3, 1, 1], [1, 1, 1]);
        // identity smoothing: tail slice one, others zero
        let w = Var::constant(Tensor::new(vec![1, 1, 3, 1, 1], vec![0.0, 0.0, 1.0]).unwrap());
        let y = causal_temporal_upsample(&mut tape, &frames(&[5.0, 7.0]), &spec, &w, None).unwrap();
        assert_eq!(y.value().data(), &[5.0, 7.0, 7.0]);
        let t7 = frames(&[0.0; 7]);
        let y = causal_temporal_upsample(&mut tape, &t7, &spec, &w, None).unwrap();
        let y = causal_temporal_upsample(&mut tape, &y, &spec, &w, None).unwrap();
        assert_eq!(y.shape()[2], 25);
    }

    #[test]
    fn first_output_frame_ignores_later_inputs() {
        let mut tape = Tape::inference();
        let spec = temporal_downsample_spec(2, 2);
        let w = Var::constant(Tensor::randn(spec.weight_shape().to_vec(), 0.0, 0.3, 3));
        let x = Tensor::randn(vec![1, 2, 7, 4, 4], 0.0, 1.0, 4);
        let y0 = causal_temporal_downsample(&mut tape, &Var::constant(x.clone()), &spec, &w, None)
            .unwrap();
        // change frames 1.. only
        let mut data = x.to_vec();
        let plane = 16;
        for c in 0..2 {
            for f in 1..7 {
                for v in &mut data[(c * 7 + f) * plane..(c * 7 + f + 1) * plane] {
                    *v += 1.5;
                }
            }
        }
        let x2 = Tensor::new(x.shape().to_vec(), data).unwrap();
        let y1 =
            causal_temporal_downsample(&mut tape, &Var::constant(x2), &spec, &w, None).unwrap();
        let a = y0.value().slice_time(0, 1).unwrap();
        let b = y1.value().slice_time(0, 1).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!y0.value().bitwise_eq(y1.value()));
    }
}
