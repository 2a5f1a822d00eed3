use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid range: hi ({hi}) must be greater than lo ({lo})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value {value} outside the {domain} domain")]
    OutOfDomain { value: f32, domain: &'static str },
}
