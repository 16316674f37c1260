use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate embedding: pre-normalization vector has zero norm")]
    DegenerateEmbedding,
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
}

impl Error {
    /// Prefixes the message with `context` (for example the failing
    /// iteration). Variants without a message are returned unchanged.
    pub fn context(self, context: &str) -> Self {
        let wrap = |m: String| alloc::format!("{context}: {m}");
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(wrap(m)),
            Error::InvalidStream(m) => Error::InvalidStream(wrap(m)),
            Error::Numeric(m) => Error::Numeric(wrap(m)),
            Error::State(m) => Error::State(wrap(m)),
            Error::Data(m) => Error::Data(wrap(m)),
            Error::DegenerateBatch(m) => Error::DegenerateBatch(wrap(m)),
            Error::DegenerateEmbedding => Error::DegenerateEmbedding,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
