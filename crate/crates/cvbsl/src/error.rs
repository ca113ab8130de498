use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {index} out of range for {n} modes")]
    ModeOutOfRange { index: usize, n: usize },

    #[error("two-mode gate needs distinct modes, got {0} twice")]
    SameMode(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular graph update: condition number {cond:.3e} exceeds {limit:.1e}")]
    Singular { cond: f64, limit: f64 },

    #[error("Im Z is not positive definite; the state is not normalizable")]
    NotNormalizable,

    #[error("matrix is not symplectic: max deviation {0:.3e}")]
    NotSymplectic(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph must be self-inverse and trace-zero: {0}")]
    GraphPrecondition(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("state leaves the grid window: {mass:.3e} of the norm lies beyond 0.9 L")]
    GridOverflow { mass: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient shots: {found} rows, at least {required} required")]
    InsufficientShots { found: usize, required: usize },

    #[error("malformed sample data: {0}")]
    MalformedSamples(String),

    #[error("program error: {0}")]
    Program(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
