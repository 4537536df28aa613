//! Temporal tiling: encode or decode a long clip as groups that share one
//! boundary frame, then drop the duplicated frame when concatenating.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{LatentDistribution, OdVae, TEMPORAL_COMPRESSION};
use crate::tensor::Tensor;

/// Split of `frames` input frames into groups of `group_len` frames, adjacent
/// groups sharing exactly one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilingPlan {
    pub frames: usize,
    pub group_len: usize,
    /// Frame ranges (end exclusive) of each group.
    pub groups: Vec<Range<usize>>,
}

impl TilingPlan {
    pub fn new(frames: usize, group_len: usize) -> Result<Self> {
        let g = group_len;
        if g < 5 || g % TEMPORAL_COMPRESSION != 1 {
            return Err(Error::Config(format!(
                "group length must be 1 + 4k with k >= 1 (5, 9, 13, ...), got {g}"
            )));
        }
        if frames == 0 || frames % TEMPORAL_COMPRESSION != 1 || !(frames - 1).is_multiple_of(g - 1)
        {
            let admissible: Vec<String> = (1..=4).map(|m| (1 + m * (g - 1)).to_string()).collect();
            return Err(Error::Length {
                got: frames,
                detail: format!(
                    "with group length {g} the frame count must be 1 + m*{}, i.e. one of {}, ...",
                    g - 1,
                    admissible.join(", ")
                ),
            });
        }
        let m = (frames - 1) / (g - 1);
        let groups = (0..m).map(|i| i * (g - 1)..i * (g - 1) + g).collect();
        Ok(TilingPlan {
            frames,
            group_len: g,
            groups,
        })
    }

    /// Plan over a latent of `latent_frames` frames in groups of
    /// `latent_group_len` latent frames.
    pub fn for_latent(latent_frames: usize, latent_group_len: usize) -> Result<Self> {
        if latent_frames == 0 || latent_group_len < 2 {
            return Err(Error::Config(format!(
                "latent group length must be at least 2, got {latent_group_len}"
            )));
        }
        Self::new(
            (latent_frames - 1) * TEMPORAL_COMPRESSION + 1,
            (latent_group_len - 1) * TEMPORAL_COMPRESSION + 1,
        )
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn latent_group_len(&self) -> usize {
        (self.group_len - 1) / TEMPORAL_COMPRESSION + 1
    }

    /// Latent frame ranges matching [`TilingPlan::groups`].
    pub fn latent_groups(&self) -> Vec<Range<usize>> {
        let g = self.latent_group_len();
        (0..self.group_count())
            .map(|i| i * (g - 1)..i * (g - 1) + g)
            .collect()
    }

    pub fn latent_frames(&self) -> usize {
        (self.frames - 1) / TEMPORAL_COMPRESSION + 1
    }

    /// `G + (M - 1)(G - 1)`
    pub fn reassembled_frames(&self) -> usize {
        self.group_len + (self.group_count() - 1) * (self.group_len - 1)
    }
}

/// Anything that encodes and decodes whole clips.
pub trait TemporalCodec {
    fn encode(&self, video: &Tensor) -> Result<LatentDistribution>;
    fn decode(&self, latent: &Tensor) -> Result<Tensor>;
}

impl TemporalCodec for OdVae {
    fn encode(&self, video: &Tensor) -> Result<LatentDistribution> {
        OdVae::encode(self, video)
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        OdVae::decode(self, latent)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// One group at a time; peak memory is one group's activations.
    #[default]
    Sequential,
    /// All groups on separate threads.
    Parallel,
}

fn map_groups<T: Send>(
    count: usize,
    exec: Execution,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    match exec {
        Execution::Sequential => (0..count).map(f).collect(),
        Execution::Parallel => std::thread::scope(|s| {
            let handles: Vec<_> = (0..count)
                .map(|i| {
                    s.spawn({
                        let f = &f;
                        move || f(i)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tiling worker panicked"))
                .collect()
        }),
    }
}

/// Encodes each group independently and drops the first latent frame of
/// every group after the first.
pub fn tiled_encode<C: TemporalCodec + Sync>(
    codec: &C,
    video: &Tensor,
    plan: &TilingPlan,
    exec: Execution,
) -> Result<LatentDistribution> {
    let t = video.dims5("tiled_encode")?[2];
    if t != plan.frames {
        return Err(Error::shape(
            "tiled_encode",
            format!("plan covers {} frames, video has {t}", plan.frames),
        ));
    }
    if plan.group_count() == 1 {
        return codec.encode(video);
    }
    let parts = map_groups(plan.group_count(), exec, |i| {
        let r = &plan.groups[i];
        let z = codec.encode(&video.slice_time(r.start, r.end)?)?;
        if i == 0 {
            Ok(z)
        } else {
            let zt = z.mean.shape()[2];
            Ok(LatentDistribution {
                mean: z.mean.slice_time(1, zt)?,
                logvar: z.logvar.slice_time(1, zt)?,
            })
        }
    })?;
    let means: Vec<Tensor> = parts.iter().map(|p| p.mean.clone()).collect();
    let logvars: Vec<Tensor> = parts.into_iter().map(|p| p.logvar).collect();
    LatentDistribution::new(Tensor::concat_time(&means)?, Tensor::concat_time(&logvars)?)
}

/// Decodes overlapping latent groups independently and drops the first
/// decoded frame of every group after the first.
pub fn tiled_decode<C: TemporalCodec + Sync>(
    codec: &C,
    latent: &Tensor,
    plan: &TilingPlan,
    exec: Execution,
) -> Result<Tensor> {
    let t = latent.dims5("tiled_decode")?[2];
    if t != plan.latent_frames() {
        return Err(Error::shape(
            "tiled_decode",
            format!(
                "plan covers {} latent frames, latent has {t}",
                plan.latent_frames()
            ),
        ));
    }
    if plan.group_count() == 1 {
        return codec.decode(latent);
    }
    let ranges = plan.latent_groups();
    let parts = map_groups(plan.group_count(), exec, |i| {
        let r = &ranges[i];
        let x = codec.decode(&latent.slice_time(r.start, r.end)?)?;
        if i == 0 {
            Ok(x)
        } else {
            x.slice_time(1, x.shape()[2])
        }
    })?;
    Tensor::concat_time(&parts)
}
