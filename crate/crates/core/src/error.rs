use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate surface: r_n vanishes at {0:?}")]
    DegenerateSurface(Vec<f64>),

    #[error("gauge matrix is singular at lattice point {index} (coords {coords:?}), smallest singular value {sigma_min:e}")]
    GaugeSingular {
        index: usize,
        coords: Vec<f64>,
        sigma_min: f64,
    },

    #[error("unsupported scale {0}: not lattice compatible and no polynomial data")]
    UnsupportedScale(f64),

    #[error("unsupported surface: {0}")]
    UnsupportedSurface(String),

    #[error("no solution: jet symmetry defect {defect:e} exceeds tolerance {tol:e}")]
    NoSolution { defect: f64, tol: f64 },

    #[error("solver failed after {iterations} iterations (residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("non-unique solution: zero regularization with rank-deficient system")]
    NonUniqueSolution,

    #[error("smallness violated at step {step}: c~*|B| = {value:e} (must be < 1/2)")]
    SmallnessViolation { step: usize, value: f64 },

    #[error("iteration diverged at step {step}: delta rose from {previous:e} to {current:e}")]
    Diverged {
        step: usize,
        previous: f64,
        current: f64,
    },

    #[error("frame degenerate: invertibility margin {0:e} is not positive")]
    FrameDegenerate(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
