use std::path::PathBuf;

use crate::datamodel::SampleId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {field}: {detail}")]
    MalformedHeader { field: &'static str, detail: String },

    #[error("truncated payload: expected {expected} bytes, found {found} (first missing byte at offset {found})")]
    Truncated { expected: usize, found: usize },

    #[error("trailing data: {extra} unexpected bytes after payload at offset {offset}")]
    TrailingData { offset: usize, extra: usize },

    #[error("non-finite value at flat index {index} (sample {sample}, view {view}, dim {dim})")]
    NonFinite {
        index: usize,
        sample: usize,
        view: usize,
        dim: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate sample id {0}")]
    DuplicateId(SampleId),

    #[error("sample {0} not present in representation set {1:?}")]
    MissingSample(SampleId, String),

    #[error("vector at sample index {sample}, view {view} has near-zero norm {norm:e}")]
    ZeroNorm { sample: usize, view: usize, norm: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("non-finite value in layer {layer} of encoder forward pass")]
    NonFiniteForward { layer: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("linear probe diverged at step {step}")]
    ProbeDiverged { step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
