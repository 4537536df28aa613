use indexmap::IndexMap;

use super::config::{OdVaeConfig, SPATIAL_COMPRESSION, TEMPORAL_COMPRESSION};
use super::distribution::{LatentDistribution, LOGVAR_RANGE};
use super::layout::{
    Architecture, AttnSlots, ConvLayout, ConvRole, ConvSlot, ConvTag, Mid, NormSlot, ResBlock,
    Skeleton, TEMPORAL_KERNEL,
};
use crate::autograd::{Tape, Var};
use crate::causal::{
    causal_conv3d, causal_temporal_downsample, causal_temporal_upsample, CausalConv3dSpec,
};
use crate::error::{Error, InitReport, Result};
use crate::init::{random_parameters, NamedTensorMap};
use crate::tensor::Tensor;

const NORM_EPS: f32 = 1e-6;

/// Model parameters placed on a tape, either as trainable leaves or as
/// constants.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Checks a pixel video `(N, 3, T, H, W)` against length and resolution
/// requirements.
pub(crate) fn check_video_shape(arch: Architecture, shape: &[usize]) -> Result<()> {
    let &[_, c, t, h, w] = shape else {
        return Err(Error::shape(
            "encode",
            format!("expected (N, 3, T, H, W), got {shape:?}"),
        ));
    };
    if c != 3 {
        return Err(Error::shape(
            "encode",
            format!("expected 3 channels, got {c}"),
        ));
    }
    if matches!(arch, Architecture::Video(_)) && t % TEMPORAL_COMPRESSION != 1 {
        return Err(Error::Length {
            got: t,
            detail: "frame count must have the form 1 + 4k (1, 5, 9, 13, ...)".into(),
        });
    }
    if h % SPATIAL_COMPRESSION != 0 || w % SPATIAL_COMPRESSION != 0 {
        return Err(Error::shape(
            "encode",
            format!("height and width must be multiples of 8, got {h}x{w}"),
        ));
    }
    Ok(())
}

/// Encoder/decoder pair with a fixed layout and owned parameters.
#[derive(Clone, Debug)]
pub struct OdVae {
    config: OdVaeConfig,
    skeleton: Skeleton,
    params: NamedTensorMap,
}

impl OdVae {
    /// Video model with seeded random weights.
    pub fn build(config: &OdVaeConfig) -> Result<Self> {
        Self::build_arch(config, Architecture::Video(config.variant))
    }

    /// Per-frame twin of `config`: same layer names, every convolution 2D,
    /// no temporal resampling.
    pub fn build_image_twin(config: &OdVaeConfig) -> Result<Self> {
        Self::build_arch(config, Architecture::Image)
    }

    pub fn build_arch(config: &OdVaeConfig, arch: Architecture) -> Result<Self> {
        config.validate()?;
        let skeleton = Skeleton::new(config, arch);
        let params = random_parameters(&skeleton.params(), config.seed);
        Ok(OdVae {
            config: config.clone(),
            skeleton,
            params,
        })
    }

    /// Builds a model around existing parameters; every name and shape must match.
    pub fn with_params(
        config: &OdVaeConfig,
        arch: Architecture,
        params: NamedTensorMap,
    ) -> Result<Self> {
        let mut model = Self::build_arch(config, arch)?;
        model.set_params(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &OdVaeConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.skeleton.arch
    }

    pub fn params(&self) -> &NamedTensorMap {
        &self.params
    }

    pub fn into_params(self) -> NamedTensorMap {
        self.params
    }

    /// Expected parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.skeleton
            .params()
            .into_iter()
            .map(|p| (p.name, p.shape))
            .collect()
    }

    pub(crate) fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    /// Replaces all parameters. Missing or mis-shaped entries are reported
    /// together; extra entries are ignored.
    pub fn set_params(&mut self, mut params: NamedTensorMap) -> Result<()> {
        let mut report = InitReport::default();
        let mut ordered = NamedTensorMap::new();
        for spec in self.skeleton.params() {
            match params.swap_remove(&spec.name) {
                None => report.missing.push(spec.name),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    report
                        .mismatched
                        .push((spec.name, spec.shape, t.shape().to_vec()))
                }
                Some(t) => {
                    ordered.insert(spec.name, t);
                }
            }
        }
        if !report.is_empty() {
            return Err(Error::Init(report));
        }
        self.params = ordered;
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn conv_layout(&self) -> ConvLayout {
        self.skeleton.layout()
    }

    /// Places parameters on `tape`, as leaves when `trainable`.
    pub fn param_vars(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn check_video(&self, shape: &[usize]) -> Result<()> {
        check_video_shape(self.skeleton.arch, shape)
    }

    pub fn encode(&self, x: &Tensor) -> Result<LatentDistribution> {
        let mut tape = Tape::inference();
        let pv = self.param_vars(&mut tape, false);
        let (mean, logvar) = self.encode_on(&mut tape, &pv, &Var::constant(x.clone()))?;
        LatentDistribution::new(mean.into_value(), logvar.into_value())
    }

    /// Decoded video clamped to `[0, 1]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_unclamped(z)?.clamp(0.0, 1.0))
    }

    pub fn decode_unclamped(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let pv = self.param_vars(&mut tape, false);
        Ok(self
            .decode_on(&mut tape, &pv, &Var::constant(z.clone()))?
            .into_value())
    }

    /// `decode(encode(x).mean)`
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?.mean)
    }

    /// Encoder on a tape. Returns `(mean, logvar)`, logvar clamped.
    pub fn encode_on(&self, tape: &mut Tape, pv: &ParamVars, x: &Var) -> Result<(Var, Var)> {
        self.check_video(x.shape())?;
        let e = &self.skeleton.encoder;
        let mut h = self.conv(tape, pv, &e.conv_in, x)?;
        for stage in &e.stages {
            for block in &stage.blocks {
                h = self.res_block(tape, pv, block, &h)?;
            }
            if let Some(down) = &stage.resample {
                h = self.conv(tape, pv, down, &h)?;
            }
        }
        h = self.mid(tape, pv, &e.mid, &h)?;
        h = self.norm(tape, pv, &e.norm_out, &h)?;
        h = tape.silu(&h)?;
        let moments = self.conv(tape, pv, &e.conv_out, &h)?;
        let c = self.skeleton.latent_channels;
        let mean = tape.narrow_channels(&moments, 0, c)?;
        let logvar = tape.narrow_channels(&moments, c, c)?;
        let (lo, hi) = LOGVAR_RANGE;
        let logvar = tape.clamp(&logvar, lo, hi)?;
        Ok((mean, logvar))
    }

    /// Decoder on a tape, unclamped output.
    pub fn decode_on(&self, tape: &mut Tape, pv: &ParamVars, z: &Var) -> Result<Var> {
        let c = self.skeleton.latent_channels;
        match z.shape() {
            &[_, zc, _, _, _] if zc == c => {}
            s => {
                return Err(Error::shape(
                    "decode",
                    format!("expected latent (N, {c}, t, h, w), got {s:?}"),
                ))
            }
        }
        let d = &self.skeleton.decoder;
        let mut h = self.conv(tape, pv, &d.conv_in, z)?;
        h = self.mid(tape, pv, &d.mid, &h)?;
        for stage in &d.stages {
            for block in &stage.blocks {
                h = self.res_block(tape, pv, block, &h)?;
            }
            if let Some(up) = &stage.resample {
                h = tape.upsample_nearest2(&h)?;
                h = self.conv(tape, pv, up, &h)?;
            }
        }
        h = self.norm(tape, pv, &d.norm_out, &h)?;
        h = tape.silu(&h)?;
        self.conv(tape, pv, &d.conv_out, &h)
    }

    fn conv(&self, tape: &mut Tape, pv: &ParamVars, slot: &ConvSlot, x: &Var) -> Result<Var> {
        let w = pv.get(&slot.weight)?;
        let b = pv.get(&slot.bias)?;
        let s = slot.spatial_stride;
        match slot.tag {
            ConvTag::Conv2dPerFrame => {
                let p = (slot.k - 1) / 2;
                tape.conv2d(x, w, Some(b), [s, s], [p, p])
            }
            ConvTag::CausalConv3d => {
                let spec = CausalConv3dSpec::new(
                    slot.ci,
                    slot.co,
                    [TEMPORAL_KERNEL, slot.k, slot.k],
                    [slot.temporal_stride(), s, s],
                );
                match slot.role {
                    ConvRole::Down { temporal: true } => {
                        causal_temporal_downsample(tape, x, &spec, w, Some(b))
                    }
                    ConvRole::Up { temporal: true } => {
                        causal_temporal_upsample(tape, x, &spec, w, Some(b))
                    }
                    _ => causal_conv3d(tape, x, &spec, w, Some(b)),
                }
            }
        }
    }

    fn norm(&self, tape: &mut Tape, pv: &ParamVars, slot: &NormSlot, x: &Var) -> Result<Var> {
        let gamma = pv.get(&slot.weight)?;
        let beta = pv.get(&slot.bias)?;
        tape.group_norm(x, self.skeleton.groups, gamma, beta, NORM_EPS)
    }

    fn res_block(&self, tape: &mut Tape, pv: &ParamVars, b: &ResBlock, x: &Var) -> Result<Var> {
        let mut h = self.norm(tape, pv, &b.norm1, x)?;
        h = tape.silu(&h)?;
        h = self.conv(tape, pv, &b.conv1, &h)?;
        h = self.norm(tape, pv, &b.norm2, &h)?;
        h = tape.silu(&h)?;
        h = self.conv(tape, pv, &b.conv2, &h)?;
        let skip = match &b.shortcut {
            Some(s) => self.conv(tape, pv, s, x)?,
            None => x.clone(),
        };
        tape.add(&skip, &h)
    }

    fn mid(&self, tape: &mut Tape, pv: &ParamVars, m: &Mid, x: &Var) -> Result<Var> {
        let mut h = self.res_block(tape, pv, &m.block1, x)?;
        if let Some(a) = &m.attn {
            h = self.attention(tape, pv, a, &h)?;
        }
        self.res_block(tape, pv, &m.block2, &h)
    }

    /// Single-head self-attention over the pixels of each frame.
    fn attention(&self, tape: &mut Tape, pv: &ParamVars, a: &AttnSlots, x: &Var) -> Result<Var> {
        let [n, c, t, hh, ww] = x.value().dims5("attention")?;
        let hw = hh * ww;
        let h = self.norm(tape, pv, &a.norm, x)?;
        let q = self.conv(tape, pv, &a.q, &h)?;
        let k = self.conv(tape, pv, &a.k, &h)?;
        let v = self.conv(tape, pv, &a.v, &h)?;
        // (N, C, T, H, W) -> (N*T, HW, C)
        let q = tape.permute(&q, &[0, 2, 3, 4, 1])?;
        let q = tape.reshape(&q, vec![n * t, hw, c])?;
        let v = tape.permute(&v, &[0, 2, 3, 4, 1])?;
        let v = tape.reshape(&v, vec![n * t, hw, c])?;
        // (N, C, T, H, W) -> (N*T, C, HW)
        let k = tape.permute(&k, &[0, 2, 1, 3, 4])?;
        let k = tape.reshape(&k, vec![n * t, c, hw])?;
        let scores = tape.matmul(&q, &k)?;
        let scores = tape.scale(&scores, 1.0 / (c as f32).sqrt())?;
        let weights = tape.softmax(&scores)?;
        let o = tape.matmul(&weights, &v)?;
        let o = tape.reshape(&o, vec![n, t, hh, ww, c])?;
        let o = tape.permute(&o, &[0, 4, 1, 2, 3])?;
        let o = self.conv(tape, pv, &a.proj, &o)?;
        tape.add(x, &o)
    }
}
