use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("singular covariance: {deficient} deficient direction(s), smallest eigenvalue {min_eigenvalue:e}; directions {directions:?}")]
    SingularCovariance {
        deficient: usize,
        min_eigenvalue: f64,
        directions: Vec<Vec<f64>>,
    },

    #[error("eigensolver did not converge (max residual {max_residual:e})")]
    EigenNonConvergence { max_residual: f64 },

    #[error("patch has no kernel mass against the representatives (max weight {max_weight:e})")]
    DegenerateKernel { max_weight: f64 },

    #[error("duplicate cell id {cell_id} in section {section_id}")]
    DuplicateCell { section_id: String, cell_id: u64 },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
