//! Error type shared by every module, with the exit-code classification used
//! by the command-line front end.

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlcError {
    #[error("insufficient potential data")]
    InsufficientPotentialData,
    #[error("assumption violated: ⟨μ,φ_{k}⟩ ≠ 0 (|⟨μ,φ_k⟩| = {value:.3e})")]
    AssumptionViolated { k: usize, value: f64 },
    #[error("insufficient coefficient decay for order {p}")]
    InsufficientDecay { p: usize },
    #[error("pole proximity: |ω| = {omega} within tolerance of λ_{j}")]
    PoleProximity { omega: f64, j: usize },
    #[error("horizon mismatch: {0} vs {1}")]
    HorizonMismatch(f64, f64),
    #[error("project to zero mean first")]
    NotZeroMean,
    #[error("ε too large for pole lattice")]
    EpsilonTooLarge,
    #[error("non-unit initial state (‖ψ0‖ = {0})")]
    NonUnitState(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("pole too weak, increase j₀")]
    PoleTooWeak,
    #[error("increase j₀")]
    IncreaseJ0,
    #[error("increase N or reduce moment count")]
    IllConditioned,
    #[error("real tangent direction unavailable at k=0")]
    RealTangentUnavailable,
    #[error("T too large for tangent basis")]
    TangentBasisDegenerate,
    #[error("target outside numerical neighborhood; reduce δ")]
    Divergence,
    #[error("family does not bracket a_k = 0")]
    NoBracket,
    #[error("radius too large")]
    RadiusTooLarge,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl StlcError {
    /// Process exit code: 2 for precondition/configuration problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            StlcError::InsufficientPotentialData
            | StlcError::AssumptionViolated { .. }
            | StlcError::HorizonMismatch(..)
            | StlcError::NotZeroMean
            | StlcError::NonUnitState(_)
            | StlcError::Precondition(_)
            | StlcError::RealTangentUnavailable
            | StlcError::RadiusTooLarge
            | StlcError::NoBracket
            | StlcError::Config(_)
            | StlcError::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, StlcError>;
