//! Encoder, decoder and variant layouts.

mod config;
mod distribution;
mod flops;
mod layout;
mod network;

pub use config::{OdVaeConfig, Variant, SPATIAL_COMPRESSION, TEMPORAL_COMPRESSION};
pub use distribution::{LatentDistribution, LOGVAR_RANGE};
pub use flops::{flops_estimate, FlopsReport, LayerFlops};
pub use layout::{
    arch_layout, conv_layout, Architecture, ConvLayout, ConvRole, ConvTag, LayoutEntry,
    TEMPORAL_KERNEL,
};
pub use network::{OdVae, ParamVars};

pub(crate) use layout::{ParamKind, ParamSpec};

/// Latent shape `(N, c, t', h, w)` produced for a video of shape `(N, 3, T, H, W)`.
pub fn latent_shape(config: &OdVaeConfig, video_shape: [usize; 5]) -> [usize; 5] {
    let [n, _, t, h, w] = video_shape;
    [
        n,
        config.latent_channels,
        (t - 1) / TEMPORAL_COMPRESSION + 1,
        h / SPATIAL_COMPRESSION,
        w / SPATIAL_COMPRESSION,
    ]
}

/// Video shape produced by decoding a latent of shape `(N, c, t', h, w)`.
pub fn video_shape(latent_shape: [usize; 5]) -> [usize; 5] {
    let [n, _, t, h, w] = latent_shape;
    [
        n,
        3,
        (t - 1) * TEMPORAL_COMPRESSION + 1,
        h * SPATIAL_COMPRESSION,
        w * SPATIAL_COMPRESSION,
    ]
}
