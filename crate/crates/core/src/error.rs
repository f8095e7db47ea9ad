use thiserror::Error;

/// Errors surfaced by the prior engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range. `path` is the dotted key of the
    /// offending field, e.g. `mechanism.theta_range`.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Normalization was requested over fewer than two pre-intervention observations.
    #[error("empty pre-intervention window: onset index {onset} leaves fewer than 2 observations")]
    EmptyPreWindow { onset: usize },

    /// A serialized record stream failed validation.
    #[error("corrupt record stream at byte offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("stream handle is closed")]
    Closed,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
