use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. The CLI maps the variants onto exit codes
/// (config 2, data 3, everything else 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// Shape mismatch inside the network engine; `layer` identifies the
    /// offending layer by position and kind.
    #[error("shape mismatch at {layer}: {msg}")]
    Shape { layer: String, msg: String },

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    /// Exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            _ => 4,
        }
    }

    /// Short machine-readable kind tag used in the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Shape { .. } => "shape",
            Error::Runtime(_) => "runtime",
            Error::Io(_) => "io",
        }
    }
}
