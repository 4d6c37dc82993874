use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}: batch statistics never accumulated, cannot run in eval mode")]
    Uninitialized(&'static str),
    #[error("{0}: backward called without a cached forward pass")]
    MissingCache(&'static str),
    #[error("{op}: negative input element {value}")]
    NegativeInput { op: &'static str, value: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}: zero-norm row {1}")]
    ZeroNorm(&'static str, usize),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric failures as opposed to bad input: NaN/Inf during training,
    /// or a feature vector that collapsed to zero before a cosine head.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::ZeroNorm(..))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
