use thiserror::Error;

/// Errors raised by matrix construction, the projection solvers and the
/// anchor-selection machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("negative entry {value} at row {row}, column {col}")]
    Negative { row: usize, col: usize, value: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("anchor column {column} is identically zero")]
    DegenerateAnchor { column: usize },

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("every candidate column is zero")]
    AllColumnsZero,

    #[error("tie resolution exceeded the recursion limit of {limit}")]
    RecursionLimit { limit: usize },

    #[error("no truth pixels of one class; ROC is undefined")]
    DegenerateTruth,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
