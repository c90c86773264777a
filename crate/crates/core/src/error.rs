use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("variable `{0}` has an empty range (min must be < max)")]
    DegenerateVariable(String),

    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("cannot build an index over an empty point set")]
    EmptyIndex,

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("start position violates constraints: {0}")]
    InvalidStart(String),

    #[error("all points are identical; variance is zero")]
    DegenerateVariance,

    #[error("neighbor {0} coincides with the agent")]
    CoincidentNeighbor(usize),

    #[error("Gram matrix has a negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),

    #[error("objective bounds are degenerate for `{0}`")]
    DegenerateBounds(String),

    #[error("budget exhausted: spent {spent}, cap {cap}, requested {requested}")]
    BudgetExhausted { spent: f64, cap: f64, requested: f64 },

    #[error("not enough verified rows to train: need {needed}, have {available}")]
    TooFewRows { needed: usize, available: usize },

    #[error("constraint acceptance rate too low; gave up after {0} draws")]
    RejectionGaveUp(usize),

    #[error("the Pareto front is empty")]
    EmptyFront,

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("stale dataset version: request expected {expected}, session is at {actual}")]
    StaleVersion { expected: u64, actual: u64 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
