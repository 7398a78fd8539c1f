use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("kernel normalization failed: {0}")]
    Normalization(String),
    #[error("dominance violation: {0}")]
    DominanceViolation(String),
    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("contraction failure: {0}")]
    ContractionFailure(String),
    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("negative density: {0}")]
    NegativeDensity(String),
    #[error("singular Gram matrix: {0}")]
    SingularGram(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Process exit code for this error kind. Codes are distinct per kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::UnsupportedDimension(_) => 3,
            Error::Normalization(_) => 4,
            Error::DominanceViolation(_) => 5,
            Error::NotPositiveDefinite(_) => 6,
            Error::GeometryMismatch(_) => 7,
            Error::InvariantViolation(_) => 8,
            Error::ContractionFailure(_) => 9,
            Error::IllConditionedFit(_) => 10,
            Error::SingularSystem(_) => 11,
            Error::NegativeDensity(_) => 12,
            Error::SingularGram(_) => 13,
            Error::Io(_) => 14,
            Error::Format(_) => 15,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::Normalization(_) => "Normalization",
            Error::DominanceViolation(_) => "DominanceViolation",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::ContractionFailure(_) => "ContractionFailure",
            Error::IllConditionedFit(_) => "IllConditionedFit",
            Error::SingularSystem(_) => "SingularSystem",
            Error::NegativeDensity(_) => "NegativeDensity",
            Error::SingularGram(_) => "SingularGram",
            Error::Io(_) => "Io",
            Error::Format(_) => "Format",
        }
    }
}
