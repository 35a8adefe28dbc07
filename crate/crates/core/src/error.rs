use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("payload corruption: crc expected {expected:#010x}, got {actual:#010x}")]
    Corruption { expected: u32, actual: u32 },
    #[error("length error: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("undefined volume: {0}")]
    UndefinedVolume(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
