use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coincident points (|z-w| = {0:e})")]
    Coincident(f64),
    #[error("{0} is outside the domain {1}")]
    OutsideDomain(String, &'static str),
    #[error("degenerate map: {0}")]
    Degenerate(String),
    #[error("under-determined constraints: {0}")]
    UnderDetermined(String),
    #[error("over-determined constraints: {0}")]
    OverDetermined(String),
    #[error("point lies on the branch cut")]
    OnCut,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid coverage: {0}")]
    Coverage(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("all boundary segments are Neumann")]
    AllNeumann,
    #[error("normalization anchor does not match the domain: {0}")]
    AnchorMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("out of admissible range: {0}")]
    Range(String),
    #[error("length mismatch {mismatch:e} exceeds tolerance {tolerance:e}")]
    LengthMismatch { mismatch: f64, tolerance: f64 },
    #[error("acceptance starvation: {accepted} of {proposals} proposals accepted")]
    Starvation { accepted: usize, proposals: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::Numerical(_)
                | Error::Starvation { .. }
                | Error::LengthMismatch { .. }
                | Error::Coverage(_)
        )
    }
}
