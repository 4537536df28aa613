//! Causal 3D video autoencoder with 4x temporal and 8x spatial compression.

pub mod autograd;
pub mod bench;
pub mod causal;
pub mod cli;
pub mod config_file;
pub mod conv;
pub mod error;
pub mod formats;
pub mod init;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tiling;
pub mod training;

pub use error::{Error, InitReport, Result};
pub use init::NamedTensorMap;
pub use model::{LatentDistribution, OdVae, OdVaeConfig, Variant};
pub use tensor::Tensor;
