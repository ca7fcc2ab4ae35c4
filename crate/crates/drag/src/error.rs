//! Crate-wide error type.

use crate::providers::ProviderError;

/// Error type covering every pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum DragError {
    /// A provider call failed (transport, auth, fixture miss, malformed payload).
    #[error(transparent)]
    Provider(#[from] ProviderError),

    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The teacher completion could not be turned into the expected structure.
    #[error("parse failure at stage {stage}: {message}")]
    Parse {
        stage: &'static str,
        message: String,
    },

    /// An embedding provider produced degenerate output (zero norm, dim mismatch).
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// Cache immutability violation: same key, different payload.
    #[error("cache conflict for key {key}: payload differs from the stored entry")]
    CacheConflict { key: String },

    /// Configuration is invalid or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset file failed to load or validate.
    #[error("dataset error at {path}:{line}: {message}")]
    Dataset {
        path: String,
        line: usize,
        message: String,
    },

    /// A payload bound for the cloud teacher still contained injected PII.
    #[error("privacy violation prevented: payload contains injected surface {surface:?}")]
    PrivacyViolation { surface: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DragError>;
