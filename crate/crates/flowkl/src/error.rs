//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operands are discretized on different grids")]
    GridMismatch,

    #[error("operands use different basis truncations")]
    TruncationMismatch,

    #[error("ensemble contains no samples")]
    EmptyEnsemble,

    #[error("matrix is not symmetric: |A - A'| = {deviation:.3e} at ({row}, {col})")]
    NotSymmetric {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("input is not positive semidefinite: eigenvalue {eigenvalue:.6e} is below -{tolerance:.3e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("requested {requested} components but the rank bound is {bound}")]
    RankExceeded { requested: usize, bound: usize },

    #[error("rank deficiency at element {index}: pivot norm {pivot:.3e} is below {threshold:.3e}")]
    RankDeficient {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("family is not orthonormal under the grid quadrature: Gram deviation {deviation:.3e} exceeds {tolerance:.3e}")]
    NotOrthonormal { deviation: f64, tolerance: f64 },

    #[error("eigenvalues are not sorted nonincreasing at index {0}")]
    NotSorted(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("header JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format violation at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }
}
