use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("output variable was not recorded on this tape")]
    ForeignVar,
    #[error("leaf #{0} was not registered on this tape")]
    ForeignLeaf(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported input dimension {0} (1..=3 supported)")]
    UnsupportedDimension(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("sampling failed after {attempts} consecutive rejections")]
    SamplingFailure { attempts: u64 },
    #[error("rejection envelope too loose: acceptance rate {rate:.2e}")]
    Envelope { rate: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("malformed parameter file: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
