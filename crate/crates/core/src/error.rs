use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("format error on line {line}: {message}")]
    FormatLine { line: usize, message: String },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("search exhausted after {} levels: {message}", .levels)]
    SearchExhausted { message: String, levels: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
