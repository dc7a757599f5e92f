use thiserror::Error;

pub type Result<T> = std::result::Result<T, AcdError>;

#[derive(Debug, Error)]
pub enum AcdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no positive tail index solves E[(alpha*eps)^kappa] = 1 for alpha = {alpha} (stationarity bound {bound:.4})")]
    NoSolution { alpha: f64, bound: f64 },

    #[error("innovation moment estimate is not finite: {0}")]
    NonFiniteMoment(String),

    #[error("tail-constant denominator {estimate:e} is within 3 standard errors ({std_error:e}) of zero")]
    DenominatorNearZero { estimate: f64, std_error: f64 },

    #[error("sigma^2 requires a finite variance (kappa > 2), got kappa = {kappa}")]
    InfiniteVariance { kappa: f64 },

    #[error("event count exceeded the hard cap of {cap}")]
    BudgetExceeded { cap: usize },

    #[error("grid point {point} outside [0, {span}]")]
    GridOutOfRange { point: f64, span: f64 },

    #[error("non-positive conditional duration psi = {psi} at index {index}")]
    NonPositivePsi { index: usize, psi: f64 },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("optimizer did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("observed information is singular or not positive definite")]
    SingularInformation,

    #[error("alpha estimate is pinned at the boundary alpha = 0; t-ratio undefined")]
    BoundaryEstimate,

    #[error("invalid k = {k} for sample size n = {n} (need 1 <= k < n)")]
    InvalidK { k: usize, n: usize },

    #[error("data must be strictly positive; found {value} at index {index}")]
    NonPositiveData { index: usize, value: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("normalization {normalization} does not apply to kappa = {kappa}: {reason}")]
    RegimeMismatch {
        normalization: String,
        kappa: f64,
        reason: String,
    },

    #[error("experiment aborted: {failed} of {total} fits failed at span {span}")]
    ExperimentAborted {
        failed: usize,
        total: usize,
        span: f64,
    },

    #[error("event times not strictly increasing at line {line}")]
    NonMonotoneTimes { line: usize },

    #[error("zero duration (simultaneous events) at line {line}")]
    ZeroDuration { line: usize },

    #[error("file contains no data")]
    EmptyFile,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AcdError {
    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            AcdError::InvalidParameter(_)
                | AcdError::NoSolution { .. }
                | AcdError::InvalidK { .. }
                | AcdError::NonPositiveData { .. }
                | AcdError::TooFewSamples { .. }
                | AcdError::EmptyInput
                | AcdError::NonMonotoneTimes { .. }
                | AcdError::ZeroDuration { .. }
                | AcdError::EmptyFile
                | AcdError::Parse { .. }
                | AcdError::GridOutOfRange { .. }
                | AcdError::Io(_)
                | AcdError::Json(_)
        )
    }
}
