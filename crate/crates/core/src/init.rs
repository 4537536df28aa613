//! Weight initialization: inflation of 2D kernels and seeded random init.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, InitReport, Result};
use crate::model::{ConvTag, OdVae, ParamKind, ParamSpec, TEMPORAL_KERNEL};
use crate::tensor::Tensor;

pub use crate::formats::{load_checkpoint, save_checkpoint};

/// Ordered map of parameter name to tensor.
pub type NamedTensorMap = IndexMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// 2D kernel in the last temporal slice, zeros elsewhere.
    Tail,
    /// 2D kernel divided evenly across temporal slices.
    Average,
    /// Seeded Gaussian, no 2D source.
    Random,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Tail => "tail",
            InitMode::Average => "average",
            InitMode::Random => "random",
        })
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tail" => Ok(InitMode::Tail),
            "average" => Ok(InitMode::Average),
            "random" => Ok(InitMode::Random),
            other => Err(Error::Config(format!(
                "unknown init mode {other:?}; expected tail, average or random"
            ))),
        }
    }
}

/// Inflates a `(Co, Ci, Kh, Kw)` kernel to `(Co, Ci, kt, Kh, Kw)`.
pub fn inflate_kernel(k2d: &Tensor, kt: usize, mode: InitMode) -> Result<Tensor> {
    let &[co, ci, kh, kw] = k2d.shape() else {
        return Err(Error::shape(
            "inflate_kernel",
            format!("expected a rank-4 kernel, got {:?}", k2d.shape()),
        ));
    };
    let plane = kh * kw;
    let src = k2d.data();
    let mut out = vec![0.0f32; co * ci * kt * plane];
    for oc in 0..co * ci {
        let s = &src[oc * plane..(oc + 1) * plane];
        let base = oc * kt * plane;
        match mode {
            InitMode::Tail => {
                out[base + (kt - 1) * plane..base + kt * plane].copy_from_slice(s);
            }
            InitMode::Average => {
                for i in 0..kt {
                    for (d, &v) in out[base + i * plane..base + (i + 1) * plane]
                        .iter_mut()
                        .zip(s)
                    {
                        *d = v / kt as f32;
                    }
                }
            }
            InitMode::Random => {
                return Err(Error::Config(
                    "random init does not inflate a source kernel".into(),
                ))
            }
        }
    }
    Tensor::new(vec![co, ci, kt, kh, kw], out)
}

/// Loads `source` (a per-frame twin's parameters) into `model`, inflating
/// every 3D kernel with the tail rule.
pub fn tail_init(model: &mut OdVae, source: &NamedTensorMap) -> Result<()> {
    inflate_into(model, source, InitMode::Tail)
}

/// As [`tail_init`] but spreading each 2D kernel evenly over time.
pub fn average_init(model: &mut OdVae, source: &NamedTensorMap) -> Result<()> {
    inflate_into(model, source, InitMode::Average)
}

/// Re-draws every parameter from `seed`.
pub fn random_init(model: &mut OdVae, seed: u64) -> Result<()> {
    let specs = model.skeleton().params();
    model.set_params(random_parameters(&specs, seed))
}

/// Dispatches on `mode`; `source` is ignored for random init.
pub fn initialize(
    model: &mut OdVae,
    mode: InitMode,
    source: Option<&NamedTensorMap>,
    seed: u64,
) -> Result<()> {
    match (mode, source) {
        (InitMode::Random, _) => random_init(model, seed),
        (mode, Some(src)) => inflate_into(model, src, mode),
        (mode, None) => Err(Error::Config(format!(
            "{mode} init needs a 2D source checkpoint"
        ))),
    }
}

fn inflate_into(model: &mut OdVae, source: &NamedTensorMap, mode: InitMode) -> Result<()> {
    let mut report = InitReport::default();
    let mut out = NamedTensorMap::new();
    for spec in model.skeleton().params() {
        let expected_src = match spec.kind {
            ParamKind::ConvWeight(ConvTag::CausalConv3d) => {
                let s = &spec.shape;
                vec![s[0], s[1], s[3], s[4]]
            }
            _ => spec.shape.clone(),
        };
        let Some(src) = source.get(&spec.name) else {
            report.missing.push(spec.name);
            continue;
        };
        if src.shape() != expected_src.as_slice() {
            report
                .mismatched
                .push((spec.name, expected_src, src.shape().to_vec()));
            continue;
        }
        let value = match spec.kind {
            ParamKind::ConvWeight(ConvTag::CausalConv3d) => {
                inflate_kernel(src, TEMPORAL_KERNEL, mode)?
            }
            _ => src.clone(),
        };
        out.insert(spec.name, value);
    }
    if !report.is_empty() {
        return Err(Error::Init(report));
    }
    model.set_params(out)
}

/// Conv weights `N(0, 1/fan_in)`, conv biases zero, norm gains one, norm biases zero.
pub(crate) fn random_parameters(specs: &[ParamSpec], seed: u64) -> NamedTensorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|spec| {
            let t = match spec.kind {
                ParamKind::ConvWeight(_) => {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    let std = (1.0 / fan_in as f32).sqrt();
                    Tensor::randn_with(spec.shape.clone(), 0.0, std, &mut rng)
                }
                ParamKind::NormWeight => Tensor::ones(spec.shape.clone()),
                ParamKind::ConvBias | ParamKind::NormBias => Tensor::zeros(spec.shape.clone()),
            };
            (spec.name.clone(), t)
        })
        .collect()
}
