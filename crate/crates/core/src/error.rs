use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes do not line up for an operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was configured with invalid settings (e.g. a convolution
    /// whose output would be empty).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// An object was used in a state it does not support (e.g. running
    /// backward twice on the same graph).
    #[error("state error: {0}")]
    State(String),

    /// A file did not match its expected binary or textual format.
    #[error("format error: {0}")]
    Format(String),

    /// Counts disagree between files that must describe the same data.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Training failed (e.g. a non-finite gradient).
    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
