use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mass matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularMass { condition: f64 },
    #[error("desired mass matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularMassD { condition: f64 },
    #[error("input coupling matrix lost rank (smallest singular value {sigma_min:.3e})")]
    RankDeficientG { sigma_min: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("workspace sampling produced no admissible points")]
    EmptyWorkspace,
    #[error("eigenvalue {name} must be positive, got {value:.3e}")]
    NonpositiveEigenvalue { name: &'static str, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("system invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
