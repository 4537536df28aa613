//! Dense row-major `f32` tensors.
//!
//! A [`Tensor`] is an immutable value: its buffer sits behind an `Arc`, so
//! cloning is cheap and a tensor may be shared freely across threads. All
//! mutation happens by building new tensors.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    /// Seeded Gaussian tensor with the given mean and standard deviation.
    pub fn randn(shape: impl Into<Vec<usize>>, mean: f32, std: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::randn_with(shape, mean, std, &mut rng)
    }

    pub fn randn_with(
        shape: impl Into<Vec<usize>>,
        mean: f32,
        std: f32,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let normal = Normal::new(mean, std.max(0.0)).expect("finite normal parameters");
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    /// Seeded uniform tensor on `[lo, hi)`.
    pub fn rand_uniform(shape: impl Into<Vec<usize>>, lo: f32, hi: f32, seed: u64) -> Self {
        use rand::Rng;
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.as_ref().clone()
    }

    /// Consumes the tensor, returning the buffer without copying when unshared.
    pub fn into_vec(self) -> Vec<f32> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| shared.as_ref().clone())
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Extents of a rank-5 `(N, C, T, H, W)` tensor.
    pub fn dims5(&self, op: &'static str) -> Result<[usize; 5]> {
        match self.shape.as_slice() {
            &[n, c, t, h, w] => Ok([n, c, t, h, w]),
            other => Err(Error::shape(
                op,
                format!("expected rank-5 tensor, got {other:?}"),
            )),
        }
    }

    /// Frames `[start, end)` along axis 2 of a rank-5 tensor.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Tensor> {
        let [n, c, t, h, w] = self.dims5("slice_time")?;
        if start >= end || end > t {
            return Err(Error::shape(
                "slice_time",
                format!("range {start}..{end} outside 0..{t}"),
            ));
        }
        let plane = h * w;
        let len = end - start;
        let mut out = Vec::with_capacity(n * c * len * plane);
        for nc in 0..n * c {
            let base = nc * t * plane;
            out.extend_from_slice(&self.data[base + start * plane..base + end * plane]);
        }
        Tensor::new(vec![n, c, len, h, w], out)
    }

    /// Concatenates rank-5 tensors along the time axis.
    pub fn concat_time(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_time", "no tensors"))?;
        let [n, c, _, h, w] = first.dims5("concat_time")?;
        let mut total = 0;
        for p in parts {
            let [pn, pc, pt, ph, pw] = p.dims5("concat_time")?;
            if (pn, pc, ph, pw) != (n, c, h, w) {
                return Err(Error::shape(
                    "concat_time",
                    format!("{:?} incompatible with {:?}", p.shape(), first.shape()),
                ));
            }
            total += pt;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c * total * plane);
        for nc in 0..n * c {
            for p in parts {
                let pt = p.shape[2];
                let base = nc * pt * plane;
                out.extend_from_slice(&p.data[base..base + pt * plane]);
            }
        }
        Tensor::new(vec![n, c, total, h, w], out)
    }

    /// Batch elements `[start, end)` along axis 0.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(Error::shape(
                "slice_batch",
                format!("range {start}..{end} outside 0..{n}"),
            ));
        }
        let per = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * per..end * per].to_vec())
    }

    /// Concatenates tensors along axis 0.
    pub fn concat_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_batch", "no tensors"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{:?} incompatible with {:?}", p.shape(), first.shape()),
                ));
            }
            n += p.shape[0];
            data.extend_from_slice(p.data());
        }
        shape[0] = n;
        Tensor::new(shape, data)
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }
}
