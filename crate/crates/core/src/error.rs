use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Reduction to the fundamental domain needed more generator applications
    /// than the configured budget; the step that produced the state was too large.
    #[error("reduction budget exceeded after {word_length} generator applications")]
    BudgetExceeded { word_length: usize },

    #[error("geodesic shooting failed: boundary-angle residual {residual:.3e}")]
    ShootingFailed { residual: f64 },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    /// The leafwise operator is only weakly coercive for rho below the volume entropy.
    #[error("rho = {rho} is not below the volume entropy {volume_entropy}")]
    NotCoercive { rho: f64, volume_entropy: f64 },

    #[error("histogram is empty: n_steps ({n_steps}) does not exceed the burn-in ({burn_in_steps} steps)")]
    EmptyHistogram { n_steps: u64, burn_in_steps: u64 },

    #[error("histogram grids differ: {0}")]
    GridMismatch(String),

    #[error("estimator starved: {survivors:.1} effective survivors (need at least {required})")]
    Starvation { survivors: f64, required: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
