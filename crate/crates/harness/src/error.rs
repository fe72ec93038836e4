use thiserror::Error;
use vino_core::VinoError;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags, configuration or scenario description.
    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Engine(#[from] VinoError),

    #[error("check failed: {0}")]
    Check(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Engine(VinoError::InvalidParameter(_)) => 2,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
