use thiserror::Error;

/// Errors raised anywhere in the simulation, training and experiment stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A NaN or infinity appeared in a numeric pipeline.
    #[error("numeric failure{}: {msg}", block.map(|b| format!(" at block {b}")).unwrap_or_default())]
    Numeric { block: Option<usize>, msg: String },

    /// Adaptive filter error energy blew up past the divergence limit.
    #[error("divergence at block {block}: block mse {mse:.3e} exceeds limit {limit:.3e}")]
    Instability { block: usize, mse: f64, limit: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("step-size tuning failed: {0}")]
    Tuning(String),

    /// API misuse, e.g. asking for gradients before a forward pass was recorded.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(block: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            block,
            msg: msg.into(),
        }
    }

    /// Attach a block index to a numeric error that was raised without one.
    pub fn at_block(self, block: usize) -> Self {
        match self {
            Error::Numeric { block: None, msg } => Error::Numeric {
                block: Some(block),
                msg,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], block: Option<usize>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(block, format!("non-finite value in {what}")))
    }
}
