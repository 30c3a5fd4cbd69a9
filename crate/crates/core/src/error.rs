use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("point at infinity")]
    PointAtInfinity,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration has {shells} shells, at least {needed} required")]
    InsufficientEnumeration { shells: usize, needed: usize },

    #[error("Poincaré series diverges at s = {s} (shell ratio {ratio})")]
    Divergent { s: f64, ratio: f64 },

    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),

    #[error("tail bound {achieved:e} above tolerance {target:e} at cutoff {cutoff}")]
    TailUnreachable {
        achieved: f64,
        target: f64,
        cutoff: usize,
    },

    #[error("ill-conditioned linear system (condition estimate {estimate:e})")]
    IllConditioned { estimate: f64 },

    #[error("no convergence after {iterations} iterations, best residual {best_residual:e}")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("positivity lost at iteration {iteration}")]
    PositivityLoss { iteration: usize },

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("fit diverged: {0}")]
    FitDivergence(String),

    #[error("continuation failed at alpha = {alpha} (last good {last_good:?}): {source}")]
    ContinuationFailure {
        alpha: f64,
        last_good: Option<f64>,
        source: Box<Error>,
    },

    #[error("bound {bound} violated at alpha = {alpha}: sup {sup_norm}, inf {inf_value}")]
    BoundViolation {
        alpha: f64,
        sup_norm: f64,
        inf_value: f64,
        bound: f64,
    },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PointAtInfinity => "point_at_infinity",
            Error::Domain(_) => "domain",
            Error::InsufficientEnumeration { .. } => "insufficient_enumeration",
            Error::Divergent { .. } => "divergent",
            Error::UnsupportedGroup(_) => "unsupported_group",
            Error::TailUnreachable { .. } => "tail_unreachable",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::NonConvergence { .. } => "non_convergence",
            Error::PositivityLoss { .. } => "positivity_loss",
            Error::CalibrationFailure(_) => "calibration_failure",
            Error::FitDivergence(_) => "fit_divergence",
            Error::ContinuationFailure { .. } => "continuation_failure",
            Error::BoundViolation { .. } => "bound_violation",
        }
    }
}
