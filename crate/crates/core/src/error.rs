use thiserror::Error;

/// Which side of a score image a requested value fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("integrand or objective returned a non-finite value at {at}")]
    NonFinite { at: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("no sign change found while bracketing a root from seed {seed}")]
    NoBracket { seed: f64 },

    #[error("outcome {y} is outside the support")]
    OutOfSupport { y: f64 },

    #[error("action {a} is outside the action domain [{lo}, {hi}]")]
    ActionOutOfDomain { a: f64, lo: f64, hi: f64 },

    #[error("score is not monotone in the outcome; it cannot be inverted")]
    ScoreNotInvertible,

    #[error("score value {s} lies {side:?} the image of the score")]
    ScoreOutOfRange { s: f64, side: Side },

    #[error("utility {v} is below the limited-liability floor u(0) = {floor}")]
    BelowLimitedLiability { v: f64, floor: f64 },

    #[error("utility {v} is not attainable (supremum {sup})")]
    UtilityOutOfRange { v: f64, sup: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("expected wage diverged (exceeded {limit:e})")]
    Diverged { limit: f64 },

    #[error("problem is infeasible: {reason}")]
    Infeasible { reason: String, actions: Vec<f64> },

    #[error("active-set solve failed ({active_set}) and the grid fallback failed ({grid})")]
    GridFallbackFailed { active_set: String, grid: String },

    #[error("validity does not change between the bracket endpoints")]
    NoTransition,

    #[error("operation requires {0}")]
    Precondition(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
