//! Single error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide error enum. Variants carry enough context that callers can
/// surface a one-line diagnostic without re-wrapping.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible; `detail` names the offending dimension.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument is out of its documented range.
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// An optimizer step found a parameter without a gradient.
    #[error("parameter #{index} ({numel} elements) has no gradient")]
    MissingGrad { index: usize, numel: usize },

    /// Training produced a non-finite loss value.
    #[error("non-finite loss {loss} at step {step}; aborting")]
    NonFiniteLoss { step: usize, loss: f64 },

    /// A configuration field failed validation. `field` is the offending key.
    #[error("invalid config field `{field}`: {detail}")]
    Config { field: String, detail: String },

    /// A required input artifact (dataset, checkpoint, config file) is absent.
    #[error("missing input: {0}")]
    MissingInput(String),

    /// Artifacts were produced under different configurations.
    #[error("config hash mismatch: {0}")]
    HashMismatch(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but does not parse as the expected format.
    #[error("malformed {what} at {path}: {detail}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg { op, detail: detail.into() }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { field: field.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
