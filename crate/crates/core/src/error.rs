//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("grid mismatch: fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("bottom of spectrum of -d^2/dx^2 + V is {gamma}, which is not positive; shift the potential")]
    AssumptionViolation { gamma: f64 },

    #[error("shift lies within {gap:e} of (or above) the bottom of the spectrum")]
    SingularOperator { gap: f64 },

    #[error("translation by {offset} is not a whole number of grid cells (h = {spacing})")]
    MisalignedTranslation { offset: f64, spacing: f64 },

    #[error("normalized flow stalled after {iterations} iterations (gradient norm {residual:e})")]
    FlowStalled { iterations: usize, residual: f64 },

    #[error("gluing failed at separation {separation:?}; residual history {residuals:?}")]
    GluingFailed {
        separation: Option<u64>,
        residuals: Vec<f64>,
    },

    #[error("bordered system is numerically singular (sigma_min {sigma_min:e}, norm {norm:e})")]
    DegenerateSuperposition { sigma_min: f64, norm: f64 },

    #[error("linearized operator has an eigenvalue within {gap:e} of zero")]
    NotFreelyNondegenerate { gap: f64 },

    #[error("no instability: smallest generalized eigenvalue {mu:e} is not negative")]
    NoInstability { mu: f64 },

    #[error("L2 is not positive on the orthogonal complement (smallest eigenvalue {eigenvalue:e})")]
    PositivityViolation { eigenvalue: f64 },

    #[error("integrator fault: relative mass drift {drift:e}")]
    IntegratorFault { drift: f64 },

    #[error("growth-rate fit rejected: {0}")]
    FitRejected(String),

    #[error("continuation needed: Newton failed at eps = {eps} (residual {residual:e})")]
    ContinuationNeeded { eps: f64, residual: f64 },

    #[error("the criterion value is undefined at the mass-critical exponent p = {p}")]
    CriticalExponent { p: f64 },

    #[error("target mass {target} outside the family range [{low}, {high}]")]
    OutOfRange { target: f64, low: f64, high: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
