use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters outside the model's admissible set.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("simulation diverged at step {step}: {reason}")]
    Simulation { step: usize, reason: String },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("ingestion failed: {0}")]
    Ingest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
