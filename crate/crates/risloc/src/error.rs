//! Error types shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite cost at point {point:?}: {value}")]
    NonFiniteCost { point: Vec<f64>, value: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 i/o, 4 numeric, 5 artifact mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Geometry(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 3,
            Error::Numeric(_) | Error::NonFiniteCost { .. } | Error::Shape(_) => 4,
            Error::ArtifactMismatch(_) => 5,
        }
    }
}
