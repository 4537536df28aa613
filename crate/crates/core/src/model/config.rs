use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Spatial compression factor; three stride-2 downsamples.
pub const SPATIAL_COMPRESSION: usize = 8;
/// Temporal compression factor; two causal stride-2 downsamples.
pub const TEMPORAL_COMPRESSION: usize = 4;

/// Which convolutions of the network are full 3D and which run per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Every convolution is causal 3D.
    V1,
    /// Plain convolutions alternate 3D / 2D in network order.
    V2,
    /// Convolutions operating at the full frame rate run per frame, in
    /// both encoder and decoder.
    V3,
    /// The encoder of V3 with the decoder of V1.
    V4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4];

    pub fn id(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(Variant::V1),
            "v2" | "2" => Ok(Variant::V2),
            "v3" | "3" => Ok(Variant::V3),
            "v4" | "4" => Ok(Variant::V4),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected one of v1, v2, v3, v4"
            ))),
        }
    }
}

/// Architecture of an autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct OdVaeConfig {
    pub variant: Variant,
    pub base_channels: usize,
    /// Width of each of the four stages as a multiple of `base_channels`.
    pub channel_multipliers: Vec<usize>,
    pub res_blocks_per_stage: usize,
    pub latent_channels: usize,
    /// Stages (0-based) whose trailing downsample also halves the frame rate.
    pub temporal_down_stages: Vec<usize>,
    pub norm_groups: usize,
    /// Per-frame spatial self-attention between the two mid blocks.
    pub mid_attention: bool,
    pub seed: u64,
}

impl Default for OdVaeConfig {
    fn default() -> Self {
        OdVaeConfig {
            variant: Variant::V1,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4, 4],
            res_blocks_per_stage: 2,
            latent_channels: 4,
            temporal_down_stages: vec![1, 2],
            norm_groups: 8,
            mid_attention: false,
            seed: 0,
        }
    }
}

impl OdVaeConfig {
    /// Small configuration used by tests and examples.
    pub fn toy(base_channels: usize, variant: Variant) -> Self {
        OdVaeConfig {
            variant,
            base_channels,
            res_blocks_per_stage: 1,
            norm_groups: 4,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }

    pub fn spatial_down_stages(&self) -> usize {
        self.channel_multipliers.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels == 0 || self.latent_channels == 0 {
            return fail("base_channels and latent_channels must be positive".into());
        }
        if self.channel_multipliers.len() != 4 {
            return fail(format!(
                "channel_multipliers needs 4 entries (three spatial downsamples), got {:?}",
                self.channel_multipliers
            ));
        }
        if self.channel_multipliers.contains(&0) {
            return fail("channel multipliers must be positive".into());
        }
        if self.res_blocks_per_stage == 0 {
            return fail("res_blocks_per_stage must be at least 1".into());
        }
        let mut t = self.temporal_down_stages.clone();
        t.sort_unstable();
        t.dedup();
        if t.len() != 2 || t.len() != self.temporal_down_stages.len() || t.iter().any(|&s| s > 2) {
            return fail(format!(
                "temporal_down_stages needs two distinct stages in 0..=2, got {:?}",
                self.temporal_down_stages
            ));
        }
        if self.norm_groups == 0 {
            return fail("norm_groups must be positive".into());
        }
        for ch in self.stage_channels() {
            if ch % self.norm_groups != 0 {
                return fail(format!(
                    "stage width {ch} is not divisible by norm_groups {}",
                    self.norm_groups
                ));
            }
        }
        Ok(())
    }

    pub fn is_temporal_down(&self, stage: usize) -> bool {
        self.temporal_down_stages.contains(&stage)
    }
}
