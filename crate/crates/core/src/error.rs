use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("inertia matrix is singular: |det| = {det:e} is below the floor {floor:e}")]
    SingularInertia { det: f64, floor: f64 },

    #[error("effective inertia of joint {joint} is not positive ({value})")]
    NonPositiveInertia { joint: usize, value: f64 },

    #[error("integration failed at t = {t:.6} s: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("series too short: need more than {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("record too short: transient of {transient_s} s consumes the whole {duration_s} s record")]
    RecordTooShort { transient_s: f64, duration_s: f64 },

    #[error("observation matrix is rank deficient (condition number {condition_number:e})")]
    RankDeficient { condition_number: f64 },

    #[error("no convergence after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used in error records written by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularInertia { .. } => "SingularInertia",
            Error::NonPositiveInertia { .. } => "NonPositiveInertia",
            Error::IntegrationFailure { .. } => "IntegrationFailure",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::RecordTooShort { .. } => "RecordTooShort",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::InvalidInput(_) => "InvalidInput",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
