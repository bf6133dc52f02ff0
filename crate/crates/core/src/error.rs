//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The architecture description violates an invariant (bad widths, stage count, ...).
    #[error("invalid architecture: {0}")]
    Spec(String),

    /// An argument breaks an operation's precondition (shape mismatch, out of range, ...).
    #[error("invalid argument: {0}")]
    Arg(String),

    /// The input is too degenerate for the operation (single pixel, zero covariance, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Corpus or dataset problem (empty directory, no decodable images, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A training loss became non-finite.
    #[error("training diverged at step {step}")]
    Divergence { step: u64 },

    /// A memory budget (or similar resource constraint) cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Malformed or inconsistent checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Malformed configuration document.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
