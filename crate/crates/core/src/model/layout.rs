//! Network skeleton and per-variant convolution layout.
//!
//! The skeleton lists every layer with its parameter names and shapes, in
//! network order. It is shared by the forward pass, the initializers and the
//! FLOPs estimator, so all three agree on structure by construction.

use super::config::{OdVaeConfig, Variant};
use crate::error::Result;

/// How a convolution processes time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvTag {
    /// 2D kernel applied to each frame independently.
    Conv2dPerFrame,
    /// Causal 3D kernel with `Kt = 3`.
    CausalConv3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvRole {
    Plain,
    Down { temporal: bool },
    Up { temporal: bool },
}

impl ConvRole {
    pub fn is_resampling(self) -> bool {
        !matches!(self, ConvRole::Plain)
    }

    pub fn is_temporal(self) -> bool {
        matches!(
            self,
            ConvRole::Down { temporal: true } | ConvRole::Up { temporal: true }
        )
    }
}

/// Video model with a variant layout, or its per-frame image twin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Video(Variant),
    Image,
}

/// Temporal kernel extent of every causal 3D convolution.
pub const TEMPORAL_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub id: String,
    pub tag: ConvTag,
    pub role: ConvRole,
}

/// Tags of the 3x3 convolutions in network order. Pointwise convolutions
/// (residual shortcuts, attention projections) always run per frame and are
/// not listed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayout {
    pub entries: Vec<LayoutEntry>,
}

impl ConvLayout {
    pub fn encoder(&self) -> &[LayoutEntry] {
        let split = self.split();
        &self.entries[..split]
    }

    pub fn decoder(&self) -> &[LayoutEntry] {
        let split = self.split();
        &self.entries[split..]
    }

    fn split(&self) -> usize {
        self.entries
            .iter()
            .position(|e| e.id.starts_with("decoder."))
            .unwrap_or(self.entries.len())
    }

    pub fn tag(&self, id: &str) -> Option<ConvTag> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.tag)
    }

    pub fn count(&self, tag: ConvTag) -> usize {
        self.entries.iter().filter(|e| e.tag == tag).count()
    }
}

/// Layout of the video model described by `config`.
pub fn conv_layout(config: &OdVaeConfig) -> Result<ConvLayout> {
    arch_layout(config, Architecture::Video(config.variant))
}

/// Layout of `config` built as `arch`.
pub fn arch_layout(config: &OdVaeConfig, arch: Architecture) -> Result<ConvLayout> {
    config.validate()?;
    Ok(Skeleton::new(config, arch).layout())
}

#[derive(Clone, Debug)]
pub(crate) struct ConvSlot {
    pub id: String,
    pub weight: String,
    pub bias: String,
    pub ci: usize,
    pub co: usize,
    /// Spatial kernel extent (3, or 1 for pointwise).
    pub k: usize,
    pub spatial_stride: usize,
    pub role: ConvRole,
    pub tag: ConvTag,
}

impl ConvSlot {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.tag {
            ConvTag::Conv2dPerFrame => vec![self.co, self.ci, self.k, self.k],
            ConvTag::CausalConv3d => vec![self.co, self.ci, TEMPORAL_KERNEL, self.k, self.k],
        }
    }

    pub fn temporal_stride(&self) -> usize {
        match self.role {
            ConvRole::Down { temporal: true } => 2,
            _ => 1,
        }
    }

    fn in_layout(&self) -> bool {
        self.k > 1
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NormSlot {
    pub weight: String,
    pub bias: String,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    pub norm1: NormSlot,
    pub conv1: ConvSlot,
    pub norm2: NormSlot,
    pub conv2: ConvSlot,
    pub shortcut: Option<ConvSlot>,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnSlots {
    pub norm: NormSlot,
    pub q: ConvSlot,
    pub k: ConvSlot,
    pub v: ConvSlot,
    pub proj: ConvSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct Mid {
    pub block1: ResBlock,
    pub attn: Option<AttnSlots>,
    pub block2: ResBlock,
}

#[derive(Clone, Debug)]
pub(crate) struct Stage {
    pub blocks: Vec<ResBlock>,
    /// Trailing downsample (encoder) or upsample (decoder).
    pub resample: Option<ConvSlot>,
}

#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    pub conv_in: ConvSlot,
    pub stages: Vec<Stage>,
    pub mid: Mid,
    pub norm_out: NormSlot,
    pub conv_out: ConvSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    pub conv_in: ConvSlot,
    pub mid: Mid,
    pub stages: Vec<Stage>,
    pub norm_out: NormSlot,
    pub conv_out: ConvSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct Skeleton {
    pub arch: Architecture,
    pub groups: usize,
    pub latent_channels: usize,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Kind of a parameter, used by initializers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParamKind {
    ConvWeight(ConvTag),
    ConvBias,
    NormWeight,
    NormBias,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

struct Builder {
    arch: Architecture,
    /// Count of plain convolutions seen so far, for V2's alternation.
    plain_seen: usize,
    in_decoder: bool,
    /// Whether the layers being built run at the input frame rate.
    full_rate: bool,
}

impl Builder {
    fn tag(&mut self, role: ConvRole) -> ConvTag {
        use ConvTag::*;
        let variant = match self.arch {
            Architecture::Image => return Conv2dPerFrame,
            Architecture::Video(v) => v,
        };
        if role.is_temporal() {
            return CausalConv3d;
        }
        let plain_index = if role.is_resampling() {
            None
        } else {
            self.plain_seen += 1;
            Some(self.plain_seen - 1)
        };
        let per_frame = match variant {
            Variant::V1 => false,
            Variant::V2 => plain_index.is_some_and(|i| i % 2 == 1),
            Variant::V3 => self.full_rate,
            Variant::V4 => self.full_rate && !self.in_decoder,
        };
        if per_frame {
            Conv2dPerFrame
        } else {
            CausalConv3d
        }
    }

    fn conv(
        &mut self,
        id: String,
        ci: usize,
        co: usize,
        stride: usize,
        role: ConvRole,
    ) -> ConvSlot {
        let tag = self.tag(role);
        self.slot(id, ci, co, 3, stride, role, tag)
    }

    #[allow(clippy::too_many_arguments)]
    fn slot(
        &self,
        id: String,
        ci: usize,
        co: usize,
        k: usize,
        spatial_stride: usize,
        role: ConvRole,
        tag: ConvTag,
    ) -> ConvSlot {
        ConvSlot {
            weight: format!("{id}.weight"),
            bias: format!("{id}.bias"),
            id,
            ci,
            co,
            k,
            spatial_stride,
            role,
            tag,
        }
    }

    fn pointwise(&self, id: String, ci: usize, co: usize) -> ConvSlot {
        self.slot(id, ci, co, 1, 1, ConvRole::Plain, ConvTag::Conv2dPerFrame)
    }

    fn norm(&self, id: String, channels: usize) -> NormSlot {
        NormSlot {
            weight: format!("{id}.weight"),
            bias: format!("{id}.bias"),
            channels,
        }
    }

    fn res_block(&mut self, id: &str, ci: usize, co: usize) -> ResBlock {
        ResBlock {
            norm1: self.norm(format!("{id}.norm1"), ci),
            conv1: self.conv(format!("{id}.conv1"), ci, co, 1, ConvRole::Plain),
            norm2: self.norm(format!("{id}.norm2"), co),
            conv2: self.conv(format!("{id}.conv2"), co, co, 1, ConvRole::Plain),
            shortcut: (ci != co).then(|| self.pointwise(format!("{id}.shortcut"), ci, co)),
        }
    }

    fn mid(&mut self, prefix: &str, ch: usize, attention: bool) -> Mid {
        let block1 = self.res_block(&format!("{prefix}.mid.block0"), ch, ch);
        let attn = attention.then(|| {
            let id = format!("{prefix}.mid.attn");
            AttnSlots {
                norm: self.norm(format!("{id}.norm"), ch),
                q: self.pointwise(format!("{id}.q"), ch, ch),
                k: self.pointwise(format!("{id}.k"), ch, ch),
                v: self.pointwise(format!("{id}.v"), ch, ch),
                proj: self.pointwise(format!("{id}.proj"), ch, ch),
            }
        });
        let block2 = self.res_block(&format!("{prefix}.mid.block1"), ch, ch);
        Mid {
            block1,
            attn,
            block2,
        }
    }
}

impl Skeleton {
    /// `config` must already be validated.
    pub fn new(config: &OdVaeConfig, arch: Architecture) -> Self {
        let video = matches!(arch, Architecture::Video(_));
        let widths = config.stage_channels();
        let last = widths.len() - 1;
        let mut b = Builder {
            arch,
            plain_seen: 0,
            in_decoder: false,
            full_rate: true,
        };

        let conv_in = b.conv("encoder.conv_in".into(), 3, widths[0], 1, ConvRole::Plain);
        let mut stages = Vec::new();
        let mut ch = widths[0];
        for (i, &width) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for j in 0..config.res_blocks_per_stage {
                blocks.push(b.res_block(&format!("encoder.stage{i}.block{j}"), ch, width));
                ch = width;
            }
            let resample = (i < last).then(|| {
                let temporal = video && config.is_temporal_down(i);
                let slot = b.conv(
                    format!("encoder.stage{i}.down"),
                    ch,
                    ch,
                    2,
                    ConvRole::Down { temporal },
                );
                if temporal {
                    b.full_rate = false;
                }
                slot
            });
            stages.push(Stage { blocks, resample });
        }
        let mid = b.mid("encoder", ch, config.mid_attention);
        let norm_out = b.norm("encoder.norm_out".into(), ch);
        let conv_out = b.conv(
            "encoder.conv_out".into(),
            ch,
            2 * config.latent_channels,
            1,
            ConvRole::Plain,
        );
        let encoder = Encoder {
            conv_in,
            stages,
            mid,
            norm_out,
            conv_out,
        };

        b.in_decoder = true;
        b.full_rate = !video;
        let mut ch = widths[last];
        let conv_in = b.conv(
            "decoder.conv_in".into(),
            config.latent_channels,
            ch,
            1,
            ConvRole::Plain,
        );
        let mid = b.mid("decoder", ch, config.mid_attention);
        // decoder stage i mirrors encoder stage last - i
        let mut temporal_ups_left = if video {
            config.temporal_down_stages.len()
        } else {
            0
        };
        let mut stages = Vec::new();
        for i in 0..=last {
            let width = widths[last - i];
            let mut blocks = Vec::new();
            for j in 0..config.res_blocks_per_stage {
                blocks.push(b.res_block(&format!("decoder.stage{i}.block{j}"), ch, width));
                ch = width;
            }
            let resample = (i < last).then(|| {
                let temporal = video && config.is_temporal_down(last - 1 - i);
                let slot = b.conv(
                    format!("decoder.stage{i}.up"),
                    ch,
                    ch,
                    1,
                    ConvRole::Up { temporal },
                );
                if temporal {
                    temporal_ups_left -= 1;
                    b.full_rate = temporal_ups_left == 0;
                }
                slot
            });
            stages.push(Stage { blocks, resample });
        }
        let norm_out = b.norm("decoder.norm_out".into(), ch);
        let conv_out = b.conv("decoder.conv_out".into(), ch, 3, 1, ConvRole::Plain);
        let decoder = Decoder {
            conv_in,
            mid,
            stages,
            norm_out,
            conv_out,
        };

        Skeleton {
            arch,
            groups: config.norm_groups,
            latent_channels: config.latent_channels,
            encoder,
            decoder,
        }
    }

    /// Every convolution (including pointwise ones) in network order.
    pub fn convs(&self) -> Vec<&ConvSlot> {
        let mut out = Vec::new();
        let e = &self.encoder;
        out.push(&e.conv_in);
        for s in &e.stages {
            push_stage(&mut out, s);
        }
        push_mid(&mut out, &e.mid);
        out.push(&e.conv_out);
        let d = &self.decoder;
        out.push(&d.conv_in);
        push_mid(&mut out, &d.mid);
        for s in &d.stages {
            push_stage(&mut out, s);
        }
        out.push(&d.conv_out);
        out
    }

    fn norms(&self) -> Vec<&NormSlot> {
        let mut out = Vec::new();
        fn block<'a>(out: &mut Vec<&'a NormSlot>, b: &'a ResBlock) {
            out.push(&b.norm1);
            out.push(&b.norm2);
        }
        fn mid<'a>(out: &mut Vec<&'a NormSlot>, m: &'a Mid) {
            block(out, &m.block1);
            if let Some(a) = &m.attn {
                out.push(&a.norm);
            }
            block(out, &m.block2);
        }
        let e = &self.encoder;
        for s in &e.stages {
            s.blocks.iter().for_each(|b| block(&mut out, b));
        }
        mid(&mut out, &e.mid);
        out.push(&e.norm_out);
        let d = &self.decoder;
        mid(&mut out, &d.mid);
        for s in &d.stages {
            s.blocks.iter().for_each(|b| block(&mut out, b));
        }
        out.push(&d.norm_out);
        out
    }

    pub fn layout(&self) -> ConvLayout {
        ConvLayout {
            entries: self
                .convs()
                .into_iter()
                .filter(|c| c.in_layout())
                .map(|c| LayoutEntry {
                    id: c.id.clone(),
                    tag: c.tag,
                    role: c.role,
                })
                .collect(),
        }
    }

    /// Parameter names and shapes, convolutions first, then norms.
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.push(ParamSpec {
                name: c.weight.clone(),
                shape: c.weight_shape(),
                kind: ParamKind::ConvWeight(c.tag),
            });
            out.push(ParamSpec {
                name: c.bias.clone(),
                shape: vec![c.co],
                kind: ParamKind::ConvBias,
            });
        }
        for n in self.norms() {
            out.push(ParamSpec {
                name: n.weight.clone(),
                shape: vec![n.channels],
                kind: ParamKind::NormWeight,
            });
            out.push(ParamSpec {
                name: n.bias.clone(),
                shape: vec![n.channels],
                kind: ParamKind::NormBias,
            });
        }
        out
    }
}

fn push_block<'a>(out: &mut Vec<&'a ConvSlot>, b: &'a ResBlock) {
    out.push(&b.conv1);
    out.push(&b.conv2);
    out.extend(b.shortcut.as_ref());
}

fn push_mid<'a>(out: &mut Vec<&'a ConvSlot>, m: &'a Mid) {
    push_block(out, &m.block1);
    if let Some(a) = &m.attn {
        out.extend([&a.q, &a.k, &a.v, &a.proj]);
    }
    push_block(out, &m.block2);
}

fn push_stage<'a>(out: &mut Vec<&'a ConvSlot>, s: &'a Stage) {
    for b in &s.blocks {
        push_block(out, b);
    }
    out.extend(s.resample.as_ref());
}
