//! Eager, tape-based reverse-mode differentiation.
//!
//! Every op computes its value immediately. When at least one input is
//! tracked and the tape is recording, the op appends a node holding whatever
//! it needs for its vector-Jacobian product. Nodes are appended in creation
//! order, so walking the tape backwards is a reverse topological traversal
//! that visits each node once.
//!
//! ```
//! use odvae::autograd::Tape;
//! use odvae::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let y = tape.mul(&x, &x).unwrap();
//! let loss = tape.sum(&y).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

use std::collections::HashMap;

use crate::conv::{conv_backward, conv_forward, ConvDims, ConvGeometry};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// A value flowing through a computation, optionally tracked on a tape.
#[derive(Clone, Debug)]
pub struct Var {
    value: Tensor,
    node: Option<NodeId>,
}

impl Var {
    /// An untracked value; gradients never flow into it.
    pub fn constant(value: Tensor) -> Self {
        Var { value, node: None }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Option<NodeId>, Option<NodeId>),
    Sub(Option<NodeId>, Option<NodeId>),
    Mul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor,
        bv: Tensor,
    },
    Scale(NodeId, f32),
    AddScalar(NodeId),
    Silu {
        x: NodeId,
        xv: Tensor,
    },
    Exp {
        x: NodeId,
        out: Tensor,
    },
    Clamp {
        x: NodeId,
        xv: Tensor,
        lo: f32,
        hi: f32,
    },
    Sum {
        x: NodeId,
        n: usize,
    },
    Mean {
        x: NodeId,
        n: usize,
    },
    L1 {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor,
        bv: Tensor,
    },
    Mse {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor,
        bv: Tensor,
    },
    Conv {
        x: Option<NodeId>,
        w: Option<NodeId>,
        b: Option<NodeId>,
        xv: Tensor,
        wv: Tensor,
        dims: ConvDims,
        geom: ConvGeometry,
    },
    GroupNorm {
        x: Option<NodeId>,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
        x_hat: Vec<f32>,
        inv_std: Vec<f32>,
        gamma_v: Tensor,
        dims: [usize; 5],
        groups: usize,
    },
    Reshape(NodeId),
    Permute {
        x: NodeId,
        perm: Vec<usize>,
        out_shape: Vec<usize>,
    },
    PadTime {
        x: NodeId,
        dims: [usize; 5],
        pad: usize,
    },
    RepeatFrames {
        x: NodeId,
        dims: [usize; 5],
    },
    Upsample2 {
        x: NodeId,
        planes: usize,
        h: usize,
        w: usize,
    },
    NarrowChannels {
        x: NodeId,
        in_shape: Vec<usize>,
        start: usize,
    },
    Matmul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor,
        bv: Tensor,
        dims: [usize; 4],
    },
    Softmax {
        x: NodeId,
        out: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Ordered record of tracked operations.
#[derive(Debug)]
pub struct Tape {
    recording: bool,
    nodes: Vec<Node>,
    consumed: bool,
    conv_macs: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf on the tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient of a tracked leaf. `None` for constants.
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.node.and_then(|id| self.by_node.get(&id))
    }
}

fn check(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Views a rank-4 `(N, C, H, W)` or rank-5 `(N, C, T, H, W)` shape as rank 5.
fn as5(op: &'static str, shape: &[usize]) -> Result<[usize; 5]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, 1, h, w]),
        [n, c, t, h, w] => Ok([n, c, t, h, w]),
        _ => Err(Error::shape(
            op,
            format!("expected rank 4 or 5, got {shape:?}"),
        )),
    }
}

impl Tape {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            recording: true,
            nodes: Vec::new(),
            consumed: false,
            conv_macs: 0,
        }
    }

    /// A tape that records nothing; every op returns untracked values.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            nodes: Vec::new(),
            consumed: false,
            conv_macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-adds performed by convolutions on this tape so far.
    pub fn conv_macs(&self) -> u64 {
        self.conv_macs
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// Registers a tensor that requires gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        if !self.recording {
            return Var::constant(value);
        }
        let node = self.push(Op::Leaf, value.shape().to_vec());
        Var {
            value,
            node: Some(node),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn track(&self, inputs: &[&Var]) -> bool {
        self.recording && inputs.iter().any(|v| v.node.is_some())
    }

    fn emit(&mut self, op: &'static str, value: Tensor, record: Option<Op>) -> Result<Var> {
        check(op, &value)?;
        let node = record.map(|o| self.push(o, value.shape().to_vec()));
        Ok(Var { value, node })
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let v = a.value.zip_map(&b.value, |x, y| x + y)?;
        let rec = self.track(&[a, b]).then_some(Op::Add(a.node, b.node));
        self.emit("add", v, rec)
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let v = a.value.zip_map(&b.value, |x, y| x - y)?;
        let rec = self.track(&[a, b]).then_some(Op::Sub(a.node, b.node));
        self.emit("sub", v, rec)
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let v = a.value.zip_map(&b.value, |x, y| x * y)?;
        let rec = self.track(&[a, b]).then(|| Op::Mul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
        });
        self.emit("mul", v, rec)
    }

    pub fn scale(&mut self, x: &Var, s: f32) -> Result<Var> {
        let v = x.value.map(|e| e * s);
        let rec = self.track(&[x]).then(|| Op::Scale(x.node.unwrap(), s));
        self.emit("scale", v, rec)
    }

    pub fn add_scalar(&mut self, x: &Var, s: f32) -> Result<Var> {
        let v = x.value.map(|e| e + s);
        let rec = self.track(&[x]).then(|| Op::AddScalar(x.node.unwrap()));
        self.emit("add_scalar", v, rec)
    }

    pub fn silu(&mut self, x: &Var) -> Result<Var> {
        let v = x.value.map(|e| e * kernels::sigmoid(e));
        let rec = self.track(&[x]).then(|| Op::Silu {
            x: x.node.unwrap(),
            xv: x.value.clone(),
        });
        self.emit("silu", v, rec)
    }

    pub fn exp(&mut self, x: &Var) -> Result<Var> {
        let v = x.value.map(f32::exp);
        let rec = self.track(&[x]).then(|| Op::Exp {
            x: x.node.unwrap(),
            out: v.clone(),
        });
        self.emit("exp", v, rec)
    }

    /// Elementwise clamp; the gradient is zero outside `(lo, hi)`.
    pub fn clamp(&mut self, x: &Var, lo: f32, hi: f32) -> Result<Var> {
        let v = x.value.clamp(lo, hi);
        let rec = self.track(&[x]).then(|| Op::Clamp {
            x: x.node.unwrap(),
            xv: x.value.clone(),
            lo,
            hi,
        });
        self.emit("clamp", v, rec)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: &Var) -> Result<Var> {
        let v = Tensor::scalar(x.value.sum() as f32);
        let rec = self.track(&[x]).then(|| Op::Sum {
            x: x.node.unwrap(),
            n: x.value.numel(),
        });
        self.emit("sum", v, rec)
    }

    pub fn mean(&mut self, x: &Var) -> Result<Var> {
        let v = Tensor::scalar(x.value.mean() as f32);
        let rec = self.track(&[x]).then(|| Op::Mean {
            x: x.node.unwrap(),
            n: x.value.numel(),
        });
        self.emit("mean", v, rec)
    }

    /// Mean absolute error.
    pub fn l1_loss(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("l1_loss", a, b)?;
        let s: f64 = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(x, y)| (x - y).abs() as f64)
            .sum();
        let v = Tensor::scalar((s / a.value.numel() as f64) as f32);
        let rec = self.track(&[a, b]).then(|| Op::L1 {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
        });
        self.emit("l1_loss", v, rec)
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mse_loss", a, b)?;
        let s: f64 = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum();
        let v = Tensor::scalar((s / a.value.numel() as f64) as f32);
        let rec = self.track(&[a, b]).then(|| Op::Mse {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
        });
        self.emit("mse_loss", v, rec)
    }

    /// General 3D convolution with zero padding. Input `(N, Ci, T, H, W)`,
    /// kernel `(Co, Ci, Kt, Kh, Kw)`, optional bias `(Co)`.
    pub fn conv3d(
        &mut self,
        x: &Var,
        w: &Var,
        bias: Option<&Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let dims = ConvDims::resolve(x.shape(), w.shape(), &geom)?;
        if let Some(b) = bias {
            if b.shape() != [dims.co] {
                return Err(Error::shape(
                    "conv",
                    format!("bias {:?} for {} output channels", b.shape(), dims.co),
                ));
            }
        }
        let out = conv_forward(
            x.value.data(),
            w.value.data(),
            bias.map(|b| b.value.data()),
            &dims,
            &geom,
        );
        self.conv_macs += dims.macs();
        let v = Tensor::new(dims.output_shape(), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rec = self.track(&inputs).then(|| Op::Conv {
            x: x.node,
            w: w.node,
            b: bias.and_then(|b| b.node),
            xv: x.value.clone(),
            wv: w.value.clone(),
            dims,
            geom,
        });
        self.emit("conv", v, rec)
    }

    /// 2D convolution. Rank-4 inputs `(N, Ci, H, W)` are treated as single
    /// frames; rank-5 inputs are convolved frame by frame.
    pub fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        bias: Option<&Var>,
        stride: [usize; 2],
        pad: [usize; 2],
    ) -> Result<Var> {
        let [co, ci, kh, kw] = match *w.shape() {
            [co, ci, kh, kw] => [co, ci, kh, kw],
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("expected rank-4 kernel, got {s:?}"),
                ))
            }
        };
        let rank4 = x.shape().len() == 4;
        let x5 = self.reshape(x, as5("conv2d", x.shape())?.to_vec())?;
        let w5 = self.reshape(w, vec![co, ci, 1, kh, kw])?;
        let geom = ConvGeometry::new([1, stride[0], stride[1]], [0, 0], pad);
        let y = self.conv3d(&x5, &w5, bias, geom)?;
        if rank4 {
            let [n, c, _, h, w] = y.value.dims5("conv2d")?;
            self.reshape(&y, vec![n, c, h, w])
        } else {
            Ok(y)
        }
    }

    /// Per-frame group normalization with per-channel affine parameters.
    pub fn group_norm(
        &mut self,
        x: &Var,
        groups: usize,
        gamma: &Var,
        beta: &Var,
        eps: f32,
    ) -> Result<Var> {
        let dims = as5("group_norm", x.shape())?;
        let c = dims[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            )));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "group_norm",
                format!("affine parameters must have shape [{c}]"),
            ));
        }
        let out = kernels::group_norm_forward(
            x.value.data(),
            dims,
            groups,
            gamma.value.data(),
            beta.value.data(),
            eps,
        );
        let v = Tensor::new(x.shape().to_vec(), out.y)?;
        let rec = self.track(&[x, gamma, beta]).then(|| Op::GroupNorm {
            x: x.node,
            gamma: gamma.node,
            beta: beta.node,
            x_hat: out.x_hat,
            inv_std: out.inv_std,
            gamma_v: gamma.value.clone(),
            dims,
            groups,
        });
        self.emit("group_norm", v, rec)
    }

    pub fn reshape(&mut self, x: &Var, shape: Vec<usize>) -> Result<Var> {
        let v = x.value.reshape(shape)?;
        let rec = self.track(&[x]).then(|| Op::Reshape(x.node.unwrap()));
        self.emit("reshape", v, rec)
    }

    pub fn permute(&mut self, x: &Var, perm: &[usize]) -> Result<Var> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..x.shape().len()).collect::<Vec<_>>() {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of rank {}", x.shape().len()),
            ));
        }
        let (data, shape) = kernels::permute(x.value.data(), x.shape(), perm);
        let v = Tensor::new(shape.clone(), data)?;
        let rec = self.track(&[x]).then(|| Op::Permute {
            x: x.node.unwrap(),
            perm: perm.to_vec(),
            out_shape: shape,
        });
        self.emit("permute", v, rec)
    }

    /// Prepends `pad` copies of frame 0 along time.
    pub fn pad_time_replicate(&mut self, x: &Var, pad: usize) -> Result<Var> {
        let dims = x.value.dims5("pad_time_replicate")?;
        if pad == 0 {
            return Ok(x.clone());
        }
        let data = kernels::pad_time_replicate(x.value.data(), dims, pad);
        let [n, c, t, h, w] = dims;
        let v = Tensor::new(vec![n, c, t + pad, h, w], data)?;
        let rec = self.track(&[x]).then(|| Op::PadTime {
            x: x.node.unwrap(),
            dims,
            pad,
        });
        self.emit("pad_time_replicate", v, rec)
    }

    /// `1 + m` frames to `1 + 2m`: frame 0 once, every later frame twice.
    pub fn repeat_frames_causal(&mut self, x: &Var) -> Result<Var> {
        let dims = x.value.dims5("repeat_frames_causal")?;
        let data = kernels::repeat_frames_causal(x.value.data(), dims);
        let [n, c, t, h, w] = dims;
        let v = Tensor::new(vec![n, c, 2 * t - 1, h, w], data)?;
        let rec = self.track(&[x]).then(|| Op::RepeatFrames {
            x: x.node.unwrap(),
            dims,
        });
        self.emit("repeat_frames_causal", v, rec)
    }

    /// Nearest-neighbour 2x upsampling of the last two axes.
    pub fn upsample_nearest2(&mut self, x: &Var) -> Result<Var> {
        let shape = x.shape().to_vec();
        if shape.len() < 3 {
            return Err(Error::shape("upsample_nearest2", "need at least rank 3"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = x.value.numel() / (h * w);
        let data = kernels::upsample_nearest2(x.value.data(), planes, h, w);
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape[r - 2] *= 2;
        out_shape[r - 1] *= 2;
        let v = Tensor::new(out_shape, data)?;
        let rec = self.track(&[x]).then(|| Op::Upsample2 {
            x: x.node.unwrap(),
            planes,
            h,
            w,
        });
        self.emit("upsample_nearest2", v, rec)
    }

    /// Channels `[start, start + len)` along axis 1.
    pub fn narrow_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let shape = x.shape().to_vec();
        if shape.len() < 2 || start + len > shape[1] || len == 0 {
            return Err(Error::shape(
                "narrow_channels",
                format!("{start}+{len} outside {shape:?}"),
            ));
        }
        let inner: usize = shape[2..].iter().product();
        let c = shape[1];
        let mut data = Vec::with_capacity(shape[0] * len * inner);
        for n in 0..shape[0] {
            let base = (n * c + start) * inner;
            data.extend_from_slice(&x.value.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[1] = len;
        let v = Tensor::new(out_shape, data)?;
        let rec = self.track(&[x]).then(|| Op::NarrowChannels {
            x: x.node.unwrap(),
            in_shape: shape,
            start,
        });
        self.emit("narrow_channels", v, rec)
    }

    /// Batched matrix product `(B, M, K) x (B, K, N) -> (B, M, N)`.
    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (&[ba, m, k], &[bb, kb, n]) = (a.shape(), b.shape()) else {
            return Err(Error::shape(
                "matmul",
                format!(
                    "expected rank-3 operands, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                ),
            ));
        };
        if ba != bb || k != kb {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let data =
            kernels::batched_matmul(a.value.data(), b.value.data(), ba, m, k, n, false, false);
        let v = Tensor::new(vec![ba, m, n], data)?;
        let rec = self.track(&[a, b]).then(|| Op::Matmul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
            dims: [ba, m, k, n],
        });
        self.emit("matmul", v, rec)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: &Var) -> Result<Var> {
        let row = *x.shape().last().unwrap_or(&1);
        let v = Tensor::new(
            x.shape().to_vec(),
            kernels::softmax_rows(x.value.data(), row),
        )?;
        let rec = self.track(&[x]).then(|| Op::Softmax {
            x: x.node.unwrap(),
            out: v.clone(),
        });
        self.emit("softmax", v, rec)
    }

    /// Reverse pass from a scalar. Every leaf on the tape receives a gradient,
    /// zero when the loss does not depend on it. A tape can be differentiated
    /// once; call [`Tape::reset`] before reusing it.
    pub fn backward(&mut self, loss: &Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Autograd(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        if loss.value.numel() != 1 {
            return Err(Error::Autograd(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let Some(root) = loss.node else {
            return Err(Error::Autograd("loss is not tracked on this tape".into()));
        };
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0; 1]);
        let mut out = Gradients::default();

        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.shape.iter().product()]);
                out.by_node.insert(id, Tensor::new(node.shape.clone(), g)?);
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&node.op, &node.shape, g, &mut grads)?;
        }
        // leaves created after the loss are disconnected from it
        for id in root + 1..self.nodes.len() {
            if let Op::Leaf = self.nodes[id].op {
                let shape = self.nodes[id].shape.clone();
                out.by_node.insert(id, Tensor::zeros(shape));
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], id: Option<NodeId>, g: Vec<f32>) {
    let Some(id) = id else { return };
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(
    op: &Op,
    out_shape: &[usize],
    g: Vec<f32>,
    grads: &mut [Option<Vec<f32>>],
) -> Result<()> {
    match op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        Op::Add(a, b) => {
            if b.is_some() {
                accumulate(grads, *b, g.clone());
            }
            accumulate(grads, *a, g);
        }
        Op::Sub(a, b) => {
            if b.is_some() {
                accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            accumulate(grads, *a, g);
        }
        Op::Mul { a, b, av, bv } => {
            if a.is_some() {
                accumulate(
                    grads,
                    *a,
                    g.iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
                );
            }
            if b.is_some() {
                accumulate(
                    grads,
                    *b,
                    g.iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                );
            }
        }
        Op::Scale(x, s) => accumulate(grads, Some(*x), g.iter().map(|v| v * s).collect()),
        Op::AddScalar(x) => accumulate(grads, Some(*x), g),
        Op::Silu { x, xv } => {
            let d = g
                .iter()
                .zip(xv.data())
                .map(|(gv, &x)| {
                    let s = kernels::sigmoid(x);
                    gv * s * (1.0 + x * (1.0 - s))
                })
                .collect();
            accumulate(grads, Some(*x), d);
        }
        Op::Exp { x, out } => accumulate(
            grads,
            Some(*x),
            g.iter().zip(out.data()).map(|(a, b)| a * b).collect(),
        ),
        Op::Clamp { x, xv, lo, hi } => {
            let d = g
                .iter()
                .zip(xv.data())
                .map(|(gv, &v)| if v > *lo && v < *hi { *gv } else { 0.0 })
                .collect();
            accumulate(grads, Some(*x), d);
        }
        Op::Sum { x, n } => accumulate(grads, Some(*x), vec![g[0]; *n]),
        Op::Mean { x, n } => accumulate(grads, Some(*x), vec![g[0] / *n as f32; *n]),
        Op::L1 { a, b, av, bv } => {
            let n = av.numel() as f32;
            let da: Vec<f32> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| {
                    let d = x - y;
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    s * g[0] / n
                })
                .collect();
            if b.is_some() {
                accumulate(grads, *b, da.iter().map(|v| -v).collect());
            }
            accumulate(grads, *a, da);
        }
        Op::Mse { a, b, av, bv } => {
            let n = av.numel() as f32;
            let da: Vec<f32> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| 2.0 * (x - y) * g[0] / n)
                .collect();
            if b.is_some() {
                accumulate(grads, *b, da.iter().map(|v| -v).collect());
            }
            accumulate(grads, *a, da);
        }
        Op::Conv {
            x,
            w,
            b,
            xv,
            wv,
            dims,
            geom,
        } => {
            let cg = conv_backward(
                xv.data(),
                wv.data(),
                &g,
                dims,
                geom,
                [x.is_some(), w.is_some(), b.is_some()],
            );
            if let Some(dx) = cg.dx {
                accumulate(grads, *x, dx);
            }
            if let Some(dw) = cg.dw {
                accumulate(grads, *w, dw);
            }
            if let Some(db) = cg.db {
                accumulate(grads, *b, db);
            }
        }
        Op::GroupNorm {
            x,
            gamma,
            beta,
            x_hat,
            inv_std,
            gamma_v,
            dims,
            groups,
        } => {
            let (dx, dg, db) =
                kernels::group_norm_backward(&g, x_hat, inv_std, gamma_v.data(), *dims, *groups);
            if x.is_some() {
                accumulate(grads, *x, dx);
            }
            if gamma.is_some() {
                accumulate(grads, *gamma, dg);
            }
            if beta.is_some() {
                accumulate(grads, *beta, db);
            }
        }
        Op::Reshape(x) => accumulate(grads, Some(*x), g),
        Op::Permute { x, perm, out_shape } => {
            let inv = kernels::inverse_permutation(perm);
            let (d, _) = kernels::permute(&g, out_shape, &inv);
            accumulate(grads, Some(*x), d);
        }
        Op::PadTime { x, dims, pad } => {
            accumulate(
                grads,
                Some(*x),
                kernels::pad_time_replicate_backward(&g, *dims, *pad),
            );
        }
        Op::RepeatFrames { x, dims } => accumulate(
            grads,
            Some(*x),
            kernels::repeat_frames_causal_backward(&g, *dims),
        ),
        Op::Upsample2 { x, planes, h, w } => accumulate(
            grads,
            Some(*x),
            kernels::upsample_nearest2_backward(&g, *planes, *h, *w),
        ),
        Op::NarrowChannels { x, in_shape, start } => {
            let inner: usize = in_shape[2..].iter().product();
            let c = in_shape[1];
            let len = out_shape[1];
            let mut d = vec![0.0f32; in_shape.iter().product()];
            for n in 0..in_shape[0] {
                let dst = (n * c + start) * inner;
                let src = n * len * inner;
                d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(grads, Some(*x), d);
        }
        Op::Matmul { a, b, av, bv, dims } => {
            let [batch, m, k, n] = *dims;
            if a.is_some() {
                // dA = dC (m x n) * B^T (n x k)
                let da = kernels::batched_matmul(&g, bv.data(), batch, m, n, k, false, true);
                accumulate(grads, *a, da);
            }
            if b.is_some() {
                // dB = A^T (k x m) * dC (m x n)
                let db = kernels::batched_matmul(av.data(), &g, batch, k, m, n, true, false);
                accumulate(grads, *b, db);
            }
        }
        Op::Softmax { x, out } => {
            let row = *out.shape().last().unwrap_or(&1);
            accumulate(
                grads,
                Some(*x),
                kernels::softmax_rows_backward(&g, out.data(), row),
            );
        }
    }
    Ok(())
}
