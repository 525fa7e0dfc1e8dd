use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is numerically rank deficient (|R[{index}][{index}]| = {value:e})")]
    RankDeficient { index: usize, value: f64 },

    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("non-finite value produced during {stage}")]
    NonFinite { stage: &'static str },

    #[error("Milstein correction requires a single or diagonal noise channel (got {channels} coupled channels)")]
    MilsteinUnsupported { channels: usize },

    #[error("algebraic constraint residual {residual:e} exceeds tolerance at the initial state")]
    ResolverInconsistent { residual: f64 },

    #[error("stationary density is not normalizable: {0}")]
    NonNormalizable(String),

    #[error("no deterministic equilibrium found: {0}")]
    NoEquilibrium(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{model}` has no parameter `{param}`")]
    UnknownParameter { model: String, param: String },

    #[error("history grids differ between realizations")]
    MismatchedGrids,

    #[error("{failed} of {total} realizations failed (indices {indices:?})")]
    PartialFailure {
        failed: usize,
        total: usize,
        indices: Vec<usize>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
