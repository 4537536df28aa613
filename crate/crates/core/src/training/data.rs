use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Deterministic clips of a periodic texture translating by one pixel per
/// frame. Clip `i` depends only on `(seed, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amp: [f32; 3],
}

struct Rect {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    color: [f32; 3],
}

impl SyntheticDataset {
    pub fn new(
        seed: u64,
        count: usize,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Config("clip extents must be positive".into()));
        }
        Ok(SyntheticDataset {
            seed,
            count,
            frames,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Clip `index` as a `(1, 3, T, H, W)` tensor in `[0, 1]`.
    pub fn clip(&self, index: usize) -> Tensor {
        let (t, h, w) = (self.frames, self.height, self.width);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);

        let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
        let waves: Vec<Wave> = (0..3)
            .map(|_| Wave {
                fx: rng.random_range(0..3) as f32,
                fy: rng.random_range(1..3) as f32,
                phase: rng.random_range(0.0..TAU),
                amp: std::array::from_fn(|_| rng.random_range(-0.12..0.12)),
            })
            .collect();
        let rects: Vec<Rect> = (0..2)
            .map(|_| Rect {
                x0: rng.random_range(0..w),
                y0: rng.random_range(0..h),
                w: rng.random_range(w / 8..=w / 3).max(1),
                h: rng.random_range(h / 8..=h / 3).max(1),
                color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            })
            .collect();
        let (dx, dy) = loop {
            let v = (rng.random_range(-1i64..=1), rng.random_range(-1i64..=1));
            if v != (0, 0) {
                break v;
            }
        };

        // one period of the texture on the H x W torus
        let mut canvas = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut px = base;
                for wave in &waves {
                    let arg = TAU * (wave.fx * x as f32 / w as f32 + wave.fy * y as f32 / h as f32)
                        + wave.phase;
                    let s = arg.sin();
                    for c in 0..3 {
                        px[c] += wave.amp[c] * s;
                    }
                }
                for r in &rects {
                    let inside_x = (x + w - r.x0) % w < r.w;
                    let inside_y = (y + h - r.y0) % h < r.h;
                    if inside_x && inside_y {
                        px = r.color;
                    }
                }
                for c in 0..3 {
                    canvas[(c * h + y) * w + x] = px[c].clamp(0.0, 1.0);
                }
            }
        }

        let mut data = vec![0.0f32; 3 * t * h * w];
        for c in 0..3 {
            for f in 0..t {
                let sx = (dx * f as i64).rem_euclid(w as i64) as usize;
                let sy = (dy * f as i64).rem_euclid(h as i64) as usize;
                for y in 0..h {
                    let src_y = (y + h - sy) % h;
                    for x in 0..w {
                        let src_x = (x + w - sx) % w;
                        data[((c * t + f) * h + y) * w + x] = canvas[(c * h + src_y) * w + src_x];
                    }
                }
            }
        }
        Tensor::new(vec![1, 3, t, h, w], data).expect("clip extents are consistent")
    }

    /// Clips `start, start + 1, ...` (wrapping at `count`) stacked into one batch.
    pub fn batch(&self, start: usize, size: usize) -> Result<Tensor> {
        if self.count == 0 {
            return Err(Error::Config("dataset is empty".into()));
        }
        let clips: Vec<Tensor> = (0..size)
            .map(|i| self.clip((start + i) % self.count))
            .collect();
        Tensor::concat_batch(&clips)
    }

    pub fn iter(&self) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.count).map(|i| self.clip(i))
    }
}

/// The first `count` clips of the stream defined by `seed`.
pub fn synthetic_dataset(
    seed: u64,
    count: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Tensor>> {
    let ds = SyntheticDataset::new(seed, count, frames, height, width)?;
    Ok(ds.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_translations() {
        let ds = SyntheticDataset::new(3, 4, 5, 16, 16).unwrap();
        let clip = ds.clip(2);
        let d = clip.data();
        let plane = 256;
        // some shift by one pixel maps frame 0 onto frame 1 exactly
        let found = (-1i64..=1).any(|dy| {
            (-1i64..=1).any(|dx| {
                (0..16).all(|y| {
                    (0..16).all(|x| {
                        let sy = (y as i64 - dy).rem_euclid(16) as usize;
                        let sx = (x as i64 - dx).rem_euclid(16) as usize;
                        d[plane + y * 16 + x] == d[sy * 16 + sx]
                    })
                })
            })
        });
        assert!(found);
    }
}
