//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or violated precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical integration step produced a non-finite value.
    #[error("integration error in RK4 stage {stage}: {detail}")]
    Integration { stage: usize, detail: String },

    /// The moving horizon estimator could not make progress.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    /// A model forward pass produced a non-finite activation.
    #[error("inference error in {layer}: {detail}")]
    Inference { layer: String, detail: String },

    /// Malformed tape graph (detached node, shape mismatch, ...).
    #[error("graph error: {0}")]
    Graph(String),

    /// Training aborted.
    #[error("training aborted at batch {batch}: {detail}")]
    Training { batch: usize, detail: String },

    /// World/dataset generation could not satisfy the request.
    #[error("generation error: {0}")]
    Generation(String),

    /// An observation was requested outside the world grid.
    #[error("observation error: {0}")]
    Observation(String),

    /// Configuration file problem; the message names the offending key path.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
