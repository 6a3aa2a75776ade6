use thiserror::Error;

/// Errors raised by the model builders and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("site {site} out of range for a chain of {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("{n_sites} sites exceeds the configured cap of {cap}")]
    TooManySites { n_sites: usize, cap: usize },

    #[error("odd site count {0}: the chain ground state may be degenerate (set allow_odd to override)")]
    OddSiteCount(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("per-site list `{name}` has length {got}, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("eigensolver did not converge: max residual {max_residual:e}")]
    EigenNonConvergence { max_residual: f64 },

    #[error("integration step underflow at t = {t} (step {step:e})")]
    StepUnderflow { t: f64, step: f64 },

    #[error("density matrix lost positivity at t = {t}: minimum eigenvalue {min_eigenvalue:e}")]
    PositivityViolation { t: f64, min_eigenvalue: f64 },

    #[error("stationary state is not unique: null space dimension estimate {dimension}")]
    DegenerateSteadyState { dimension: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("spectral density is not normalized: integral = {integral}")]
    Unnormalized { integral: f64 },

    #[error("matrix is not a rate generator: {0}")]
    NotAGenerator(String),

    #[error("transition is dark: all matrix elements between the ground level and the first excited level vanish")]
    DarkTransition,

    #[error("ground level unreachable from level {0}")]
    Unreachable(usize),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
