use thiserror::Error;

use crate::model::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The solver stopped before certifying the KKT tolerance. The best
    /// iterate is returned with `certified == false`.
    #[error("maximum iterations exceeded (kkt residual {:.3e})", .0.kkt_residual)]
    MaxIterExceeded(Box<FitResult>),

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("operation requires the square loss")]
    WrongLoss,

    #[error("degenerate leverage at observation {index}: denominator {denominator:.3e}")]
    DegenerateLeverage { index: usize, denominator: f64 },

    #[error("degenerate denominator {0:.3e}")]
    DegenerateDenominator(f64),

    #[error("active set changed between finite-difference probes")]
    SupportChanged,

    #[error("leave-one-out solve for observation {index} failed: {source}")]
    LeaveOneOut {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
