use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree mismatch: |beta| = {0}, |gamma| = {1}")]
    DegreeMismatch(u32, u32),

    #[error("hermite degree {0} out of range (max {1})")]
    DegreeOutOfRange(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not orthogonal (residual {0:e})")]
    NotOrthogonal(f64),

    #[error("frame columns are not orthonormal (residual {0:e})")]
    NotOrthonormal(f64),

    #[error("vector is not unit norm (norm {0})")]
    NotUnit(f64),

    #[error("operator norm {0} exceeds 1")]
    NormTooLarge(f64),

    #[error("degree {0} exceeds the configured cap {1}")]
    DegreeCap(u32, u32),

    #[error("function is identically zero")]
    ZeroFunction,

    #[error("target kind not supported by this path: {0}")]
    UnsupportedTargetKind(&'static str),

    #[error("odd degree {0} with the reflection branch")]
    OddDegreeWithReflection(u32),

    #[error("no nearly-negative autocorrelation sequence for N = {0}")]
    InfeasibleN(usize),

    #[error("point outside the density support: {0}")]
    OutOfDomain(String),

    #[error("adaptive step control failed at t = {0}")]
    StepRejected(f64),

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("solution blows up before t = {0}")]
    BlowUp(f64),

    #[error("degree {0} exceeds the kernel spectrum truncation {1}")]
    DegreeExceedsSpectrum(u32, usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
