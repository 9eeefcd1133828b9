use thiserror::Error;

/// Errors produced by the estimation and theory routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum McdError {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, floor {floor:e})")]
    DegenerateMatrix { min_eigenvalue: f64, floor: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },

    #[error("subset {subset:?} spans a lower-dimensional affine set")]
    DegenerateSubset { subset: Vec<usize> },

    #[error("every candidate subset is degenerate")]
    DegenerateSample { subset: Option<Vec<usize>> },

    #[error("exhaustive search over {count} subsets exceeds the limit of {limit}")]
    TooLarge { count: f64, limit: f64 },

    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureError { estimate: f64, tolerance: f64 },

    #[error("derivative map is singular or ill-conditioned (condition number {condition:e})")]
    SingularDerivative { condition: f64 },

    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),

    #[error("trimming fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),

    #[error("no radius up to {upper:e} captures probability mass {gamma}")]
    BracketError { gamma: f64, upper: f64 },

    #[error("influence function is undefined on the sphere |x| = r")]
    BoundaryUndefined,

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, McdError>;

impl From<std::io::Error> for McdError {
    fn from(e: std::io::Error) -> Self {
        McdError::Io(e.to_string())
    }
}

pub(crate) fn shape_error(expected: impl ToString, got: impl ToString) -> McdError {
    McdError::ShapeError {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
