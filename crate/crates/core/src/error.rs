use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("metric expression is not symmetric in entries ({i},{j})")]
    NonSymmetricMetric { i: usize, j: usize },
    #[error("metric is singular or not positive definite at {point:?} (condition estimate {condition:e})")]
    SingularMetric { point: Vec<f64>, condition: f64 },
    #[error("trajectory left the chart domain at t = {time} near {point:?}")]
    DomainExit { time: f64, point: Vec<f64> },
    #[error("step count {steps} exceeds the limit {limit}")]
    StepLimit { steps: usize, limit: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e}); pair likely outside the convex patch")]
    NewtonNonConvergence { iterations: usize, residual: f64 },
    #[error("point {point:?} lies outside the convex patch centered at {center:?} with radius {radius}")]
    PatchViolation {
        point: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
    #[error("moment system is ill-conditioned (condition number {condition:e}); lower the order q")]
    IllConditioned { condition: f64 },
    #[error("rank mismatch: expected ({expected_contra},{expected_co}), found ({found_contra},{found_co})")]
    RankMismatch {
        expected_contra: usize,
        expected_co: usize,
        found_contra: usize,
        found_co: usize,
    },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("support escapes the chart: {0}")]
    SupportEscape(String),
    #[error("error below the noise floor: {0}")]
    NoiseFloor(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
