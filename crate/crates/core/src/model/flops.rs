use super::config::OdVaeConfig;
use super::layout::{
    Architecture, ConvRole, ConvSlot, ConvTag, Mid, ResBlock, Skeleton, TEMPORAL_KERNEL,
};
use super::network::{check_video_shape, OdVae};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    pub name: String,
    pub macs: u64,
}

/// Multiply-add counts of one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub encoder: u64,
    pub decoder: u64,
}

impl FlopsReport {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder
    }
}

/// Counts for encoding a video of shape `(N, 3, T, H, W)` and decoding its latent.
pub fn flops_estimate(config: &OdVaeConfig, input_shape: &[usize]) -> Result<FlopsReport> {
    config.validate()?;
    let skeleton = Skeleton::new(config, Architecture::Video(config.variant));
    skeleton_flops(&skeleton, input_shape)
}

impl OdVae {
    pub fn flops(&self, input_shape: &[usize]) -> Result<FlopsReport> {
        skeleton_flops(self.skeleton(), input_shape)
    }
}

/// Running (N, T, H, W) extents while walking the skeleton.
#[derive(Clone, Copy)]
struct Extent {
    n: u64,
    t: u64,
    h: u64,
    w: u64,
}

struct Counter {
    layers: Vec<LayerFlops>,
}

impl Counter {
    fn conv(&mut self, slot: &ConvSlot, e: &mut Extent) {
        let kt = match slot.tag {
            ConvTag::CausalConv3d => TEMPORAL_KERNEL as u64,
            ConvTag::Conv2dPerFrame => 1,
        };
        if let ConvRole::Up { temporal } = slot.role {
            if temporal {
                e.t = 2 * e.t - 1;
            }
            e.h *= 2;
            e.w *= 2;
        }
        let st = slot.temporal_stride() as u64;
        let s = slot.spatial_stride as u64;
        let k = slot.k as u64;
        let pad = (k - 1) / 2;
        e.t = (e.t - 1) / st + 1;
        e.h = (e.h + 2 * pad - k) / s + 1;
        e.w = (e.w + 2 * pad - k) / s + 1;
        let outputs = e.n * e.t * e.h * e.w;
        self.layers.push(LayerFlops {
            name: slot.id.clone(),
            macs: slot.co as u64 * slot.ci as u64 * kt * k * k * outputs,
        });
    }

    fn mid(&mut self, m: &Mid, e: &mut Extent) {
        self.block(&m.block1, e);
        if let Some(a) = &m.attn {
            let c = a.q.co as u64;
            for slot in [&a.q, &a.k, &a.v] {
                self.conv(slot, &mut e.clone());
            }
            let hw = e.h * e.w;
            let frames = e.n * e.t;
            let prefix = a.q.id.trim_end_matches(".q");
            self.layers.push(LayerFlops {
                name: format!("{prefix}.scores"),
                macs: frames * hw * hw * c,
            });
            self.layers.push(LayerFlops {
                name: format!("{prefix}.mix"),
                macs: frames * hw * hw * c,
            });
            self.conv(&a.proj, &mut e.clone());
        }
        self.block(&m.block2, e);
    }

    fn block(&mut self, b: &ResBlock, e: &mut Extent) {
        let input = *e;
        self.conv(&b.conv1, e);
        self.conv(&b.conv2, e);
        if let Some(s) = &b.shortcut {
            self.conv(s, &mut input.clone());
        }
    }

    fn sum_from(&self, start: usize) -> u64 {
        self.layers[start..].iter().map(|l| l.macs).sum()
    }
}

fn skeleton_flops(sk: &Skeleton, input_shape: &[usize]) -> Result<FlopsReport> {
    check_video_shape(sk.arch, input_shape)?;
    let mut e = Extent {
        n: input_shape[0] as u64,
        t: input_shape[2] as u64,
        h: input_shape[3] as u64,
        w: input_shape[4] as u64,
    };
    let mut c = Counter { layers: Vec::new() };
    let enc = &sk.encoder;
    c.conv(&enc.conv_in, &mut e);
    for s in &enc.stages {
        for b in &s.blocks {
            c.block(b, &mut e);
        }
        if let Some(r) = &s.resample {
            c.conv(r, &mut e);
        }
    }
    c.mid(&enc.mid, &mut e);
    c.conv(&enc.conv_out, &mut e);
    let encoder = c.sum_from(0);

    let split = c.layers.len();
    let dec = &sk.decoder;
    c.conv(&dec.conv_in, &mut e);
    c.mid(&dec.mid, &mut e);
    for s in &dec.stages {
        for b in &s.blocks {
            c.block(b, &mut e);
        }
        if let Some(r) = &s.resample {
            c.conv(r, &mut e);
        }
    }
    c.conv(&dec.conv_out, &mut e);
    let decoder = c.sum_from(split);
    Ok(FlopsReport {
        layers: c.layers,
        encoder,
        decoder,
    })
}
