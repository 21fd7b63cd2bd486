use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid extent in shape {0:?}: every extent must be at least 1")]
    InvalidExtent([usize; 4]),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: [usize; 4], shape: [usize; 4] },

    #[error("reduction over an empty extent")]
    EmptyReduction,

    #[error("unsupported kernel extent {0}; expected one of 3, 5, 7")]
    UnsupportedKernel(usize),

    #[error("unknown calibrator `{0}`; expected one of none, sb, gd, st, lbp, lbp-adj, max, max-adj")]
    UnknownCalibrator(String),

    #[error("position ({row}, {col}) lies outside the {height}x{width} domain")]
    OutsideDomain {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("rotation requires a square plane, got {height}x{width}")]
    NonSquare { height: usize, width: usize },

    #[error("pooling extent {extent} does not divide spatial size {height}x{width}")]
    NonDivisiblePool { extent: usize, height: usize, width: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward pass called without a matching forward cache")]
    MissingCache,

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate rotation angle {0} degrees")]
    DuplicateAngle(f64),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unknown fixture kind `{0}`; expected oriented-bars, two-class-linear or random-noise")]
    UnknownFixture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
