//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors surfaced by manifold, retraction, oracle, subproblem, and driver
/// operations.
#[derive(Debug, Error)]
pub enum RarError {
    /// Invalid argument: shape mismatch, mismatched base points, non-finite
    /// input, or a violated operation precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// A matrix that must have full numerical column rank did not.
    #[error("numerical rank error: {0}")]
    NumericalRank(String),

    /// A finite-difference step underflowed relative to the input scale.
    #[error("step size error: {0}")]
    StepSize(String),

    /// Invalid configuration (parameter inequalities, retraction self-test).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An inner solver violated its contract at full Krylov dimension.
    #[error("solver contract error: {0}")]
    SolverContract(String),

    /// A precondition such as `g != 0` was violated by the caller.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// Internal bookkeeping invariant broken; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, RarError>;
