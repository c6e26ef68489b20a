use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Error categories raised by the training core.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input outside the mathematical domain of an operation (log of a
    /// non-positive value, division by zero, empty reduction).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Bad data fed to an operation (out-of-range label, infeasible subsample).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation called in an invalid order (backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// Mutation attempted on a frozen model.
    #[error("frozen model: {0}")]
    Frozen(String),

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn frozen(msg: impl Into<String>) -> Self {
        Error::Frozen(msg.into())
    }
    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
