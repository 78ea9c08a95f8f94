use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum FeecError {
    #[error("ambient dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("form degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),

    #[error("wedge of degrees {left} and {right} overflows ambient dimension {dim}")]
    DegreeOverflow { left: usize, right: usize, dim: usize },

    #[error("{op} is undefined for {degree}-forms in dimension {dim}")]
    InvalidDegree { op: &'static str, degree: usize, dim: usize },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("{0}")]
    Unsupported(String),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("rank deficiency while building {what}: expected {expected}, found {found}")]
    RankDeficient { what: String, expected: usize, found: usize },

    #[error("degrees of freedom are not unisolvent: {0}")]
    NotUnisolvent(String),

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("dense problem of size {size} exceeds cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeecError>;
