use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("transform is not invertible (scale {0:e})")]
    NonInvertible(f64),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid strategy {0:?}: expected a non-empty string over {{S, D}}")]
    InvalidStrategy(String),
    #[error("bad flip map: {0}")]
    BadFlipMap(String),
    #[error("landmark count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no detection for image {0:?}")]
    MissingDetection(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
