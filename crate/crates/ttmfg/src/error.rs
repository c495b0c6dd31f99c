use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {value} lies outside the reference interval [-1, 1]")]
    OutOfReference { value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input or value at point {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("matrix is numerically rank deficient ({rank} < {cols}); lower the bond rank")]
    RankDeficient { rank: usize, cols: usize },

    #[error("unsupported representation: {0}")]
    Unsupported(String),

    #[error("node budget exceeded: {nodes} nodes > cap {cap}; use the SL2p rule instead")]
    NodeBudget { nodes: usize, cap: usize },

    #[error("time step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization failed: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
