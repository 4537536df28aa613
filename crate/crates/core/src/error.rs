use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes violate its contract.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid model, training or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A temporal length that does not satisfy the required congruence.
    #[error("invalid temporal length {got}: {detail}")]
    Length { got: usize, detail: String },

    /// A published operation produced NaN or infinite values.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("autograd error: {0}")]
    Autograd(String),

    /// Weight initialization could not resolve every parameter.
    #[error("initialization failed:\n{0}")]
    Init(InitReport),

    /// Malformed ODVT or ODCK payload.
    #[error("format error: {0}")]
    Format(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Itemized list of parameters that could not be initialized from a source map.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct InitReport {
    pub missing: Vec<String>,
    /// (name, expected shape, found shape)
    pub mismatched: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl InitReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty()
    }
}

impl std::fmt::Display for InitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for name in &self.missing {
            writeln!(f, "  missing: {name}")?;
        }
        for (name, expected, found) in &self.mismatched {
            writeln!(
                f,
                "  mismatched: {name} expected {expected:?} found {found:?}"
            )?;
        }
        Ok(())
    }
}
