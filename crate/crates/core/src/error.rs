use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("undefined phase/amplitude: field is identically zero")]
    ZeroField,

    #[error("field is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("instability: {0}")]
    Instability(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate outcome: {0}")]
    Degenerate(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("not a plane-wave eigenmode of this hamiltonian: {0}")]
    NotEigenmode(String),

    #[error("broken ensemble construction: {0}")]
    BrokenEnsemble(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that originate in the time stepper rather than in
    /// the caller's inputs.
    pub fn is_instability(&self) -> bool {
        matches!(self, Error::Instability(_) | Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
