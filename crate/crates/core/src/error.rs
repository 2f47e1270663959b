use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call-site argument outside its allowed domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A NaN or infinity surfaced in a gradient or loss.
    #[error("non-finite value in {context}: {dump}")]
    NonFinite { context: String, dump: String },

    #[error("malformed input at {location}: {message}")]
    Format { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
