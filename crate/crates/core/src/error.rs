use thiserror::Error;

/// Errors raised by the tomography engine.
#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid measurement configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every particle assigns zero probability to the observed outcome.
    #[error("degenerate weight update: outcome {outcome} has zero probability under every particle")]
    DegenerateUpdate { outcome: usize },

    /// A run failed; carries enough context to replay it.
    #[error("run failed at event {event} (seed {seed}): {source}")]
    RunFailed {
        seed: u64,
        event: u64,
        #[source]
        source: Box<TomographyError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TomographyError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TomographyError::DimensionMismatch { expected, found })
    }
}
