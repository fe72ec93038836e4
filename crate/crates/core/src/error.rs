use thiserror::Error;

/// Errors produced by the editing engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum VinoError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    #[error("condition key `{0}` is not registered with the denoiser")]
    UnregisteredCondition(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("trajectory too short: need index {needed}, have up to {available}")]
    TrajectoryTooShort { needed: usize, available: usize },

    #[error("provider failure: {0}")]
    Provider(String),
}

pub type Result<T> = std::result::Result<T, VinoError>;
