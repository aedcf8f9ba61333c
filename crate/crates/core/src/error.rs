use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Every variant maps to a stable kebab-case code (see [`Error::code`]) so
/// that command-line front ends can emit machine-readable failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("a delta distribution has no pointwise density; substitute tau = tau0 instead")]
    DeltaNotEvaluable,

    #[error("a delta distribution cannot be truncated to a probability interval")]
    DeltaNotTruncatable,

    #[error("support [{lo}, {hi}] leaves the unit interval")]
    SupportOutOfRange { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation expects a {expected} count distribution")]
    WrongArity { expected: &'static str },

    #[error("lattice cutoff {given} is too small; at least {required} is needed")]
    CutoffTooSmall { given: usize, required: usize },

    #[error("quadrature did not converge (residual {residual:e})")]
    QuadratureFailed { residual: f64 },

    #[error("the two outcome Gaussians are identical; no decision threshold exists")]
    NoThreshold,

    #[error("{given} samples requested, at least {minimum} are required")]
    InsufficientSamples { given: usize, minimum: usize },

    #[error("both likelihoods vanish for the observed record")]
    ZeroLikelihood,

    #[error("count distributions have mismatched supports or representations")]
    SupportMismatch,

    #[error("requested {requested} retained records but only {available} are available")]
    BudgetInfeasible { requested: f64, available: f64 },

    #[error("prior {0} is not supported; error figures assume equiprobable processes")]
    UnsupportedPrior(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DeltaNotEvaluable => "delta-not-evaluable",
            Error::DeltaNotTruncatable => "delta-not-truncatable",
            Error::SupportOutOfRange { .. } => "support-out-of-range",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::WrongArity { .. } => "wrong-arity",
            Error::CutoffTooSmall { .. } => "cutoff-too-small",
            Error::QuadratureFailed { .. } => "quadrature-failed",
            Error::NoThreshold => "no-threshold",
            Error::InsufficientSamples { .. } => "insufficient-samples",
            Error::ZeroLikelihood => "zero-likelihood",
            Error::SupportMismatch => "support-mismatch",
            Error::BudgetInfeasible { .. } => "budget-infeasible",
            Error::UnsupportedPrior(_) => "unsupported-prior",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
