use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("truncation too small: tail mass {tail_mass:.3e} exceeds {limit:.1e}")]
    TruncationTail { tail_mass: f64, limit: f64 },

    #[error("truncation overflow: {dropped_mass:.3e} of the input mass lies outside the joint cutoff")]
    TruncationOverflow { dropped_mass: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("unnormalized state: {what} = {value:.15}")]
    NotNormalized { what: &'static str, value: f64 },

    #[error("phase grids differ")]
    GridMismatch,

    #[error("degenerate spectrum: eigenvalue {eigenvalue:.3e} is within {gap:.1e} of zero")]
    DegenerateSpectrum { eigenvalue: f64, gap: f64 },

    #[error("constraint Jacobian is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("KKT matrix is singular")]
    SingularKkt,

    #[error("no sign change of the phase-width ratio in [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("every start failed to converge ({starts} tried)")]
    AllRestartsFailed { starts: usize },

    #[error("could not reach a feasible point: {0}")]
    Infeasible(String),

    #[error("malformed document: {0}")]
    Format(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
