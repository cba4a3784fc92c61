use std::fmt;

/// A structural problem found in an affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// The pair was supplied twice with different weights.
    Asymmetric { i: usize, j: usize },
    /// Off-diagonal weight outside `(0, 1]` (or not finite).
    OutOfRange { i: usize, j: usize, w: f64 },
    /// Diagonal similarity outside `[1e-6, 1]`.
    BadDiagonal { i: usize, value: f64 },
    /// An index is not below the vertex count.
    IndexOutOfBounds { i: usize, j: usize, n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Asymmetric { i, j } => {
                write!(f, "asymmetric entry: M({i},{j}) != M({j},{i})")
            }
            Violation::OutOfRange { i, j, w } => {
                write!(f, "out-of-range weight {w} at ({i},{j})")
            }
            Violation::BadDiagonal { i, value } => {
                write!(f, "bad diagonal value {value} at {i}")
            }
            Violation::IndexOutOfBounds { i, j, n } => {
                write!(f, "index ({i},{j}) out of bounds for n = {n}")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid affinity matrix: {0}")]
    Violation(Violation),

    #[error("invalid residual {0}: must be finite")]
    InvalidResidual(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate iterate: every entry was clipped to zero")]
    DegenerateIterate,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("problem size {n} exceeds the limit of {limit}")]
    SizeLimit { n: usize, limit: usize },

    #[error("non-binary weight {w} at ({i},{j})")]
    NonBinary { i: usize, j: usize, w: f64 },

    #[error("index {index} out of range for a set of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("vector {index} is not unit-norm (norm = {norm})")]
    NonUnit { index: usize, norm: f64 },

    #[error("duplicate association ({0}, {1})")]
    DuplicateAssociation(usize, usize),

    #[error("{m} associations exceed the pairwise scoring guard of {limit}; set allow_large to override")]
    TooManyAssociations { m: usize, limit: usize },

    #[error("cannot draw {requested} inliers from {available} model points")]
    InsufficientInliers { requested: usize, available: usize },

    #[error("empty selection")]
    EmptySelection,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Violation(v)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
