//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("diffusion matrix A = Sigma Sigma^T not positive-definite at {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate projected diffusion: |Sigma^1| = 0 at the current state")]
    DegenerateProjection,

    #[error("non-finite state at step {step}{}", path.map(|p| format!(" (path {p})")).unwrap_or_default())]
    NonFiniteState { step: usize, path: Option<u64> },

    #[error("random clock non-monotone at step {step}: increment {increment}")]
    ClockNotMonotone { step: usize, increment: f64 },

    #[error("intrinsic-time knot list overflow (cap {cap})")]
    KnotOverflow { cap: usize },

    #[error("eigensolve failure: {0}")]
    EigenSolve(String),

    #[error("level-set weights not normalizable: {0}")]
    WeightsNotNormalizable(String),

    #[error("right-hand side not mean-zero under the level-set weights: weighted mean {mean:e}")]
    NotMeanZero { mean: f64 },

    #[error("singular tridiagonal system")]
    SingularSystem,

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("model parameter error: {0}")]
    ModelParameter(String),

    #[error("model has no closed-form effective coefficients")]
    MissingClosedForm,

    #[error("too few valid bins: {0} (need at least 2)")]
    TooFewValidBins(usize),

    #[error("all bins invalid (fewer than {0} samples each)")]
    AllBinsInvalid(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that arise while integrating a path, as opposed to
    /// bad inputs. CLI exit codes distinguish the two.
    pub fn is_runtime_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::ClockNotMonotone { .. }
                | Error::DegenerateProjection
                | Error::KnotOverflow { .. }
        )
    }
}
