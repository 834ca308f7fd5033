use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: pivot {pivot} is {value}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("NaN encountered in {0}")]
    NaN(&'static str),

    #[error("target has no gradient; MALA needs one")]
    MissingGradient,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate weight set: every importance weight is zero")]
    DegenerateWeights,

    #[error("degenerate series: zero variance")]
    DegenerateSeries,

    #[error("calibration functional degenerate: all residuals vanish")]
    DegenerateFunctional,

    #[error("non-finite state encountered at step {step}")]
    NonFiniteState { step: usize },

    #[error("no sign change of s^2 - J_f(s) on the bracket; sampled g values: {samples:?}")]
    NoSignChange { samples: Vec<(f64, f64)> },

    #[error("quadrature did not converge: relative change {relative_change:e} after {refinements} refinements")]
    QuadratureNotConverged { relative_change: f64, refinements: usize },

    #[error("overflow in forward model: {0}")]
    Overflow(String),

    #[error("invalid finite model: {0}")]
    InvalidModel(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("malformed data at row {row}: {message}")]
    MalformedData { row: usize, message: String },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation accounting mismatch: expected {expected} target evaluations, counted {counted}")]
    EvaluationCount { expected: u64, counted: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from the numerics rather than from inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NaN(_)
                | Error::DegenerateWeights
                | Error::DegenerateSeries
                | Error::DegenerateFunctional
                | Error::NonFiniteState { .. }
                | Error::NoSignChange { .. }
                | Error::QuadratureNotConverged { .. }
                | Error::Overflow(_)
                | Error::Eigensolver(_)
                | Error::Optimizer(_)
                | Error::EvaluationCount { .. }
                | Error::NotPositiveDefinite { .. }
        )
    }
}
