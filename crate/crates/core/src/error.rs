use thiserror::Error;

/// Errors produced by the adaclip library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate divisor at coordinate {index}: {value}")]
    DegenerateDivisor { index: usize, value: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The Gaussian closed-form calibration only holds for epsilon < 1.
    #[error("epsilon {epsilon} is outside the calibration range (0, 1)")]
    OutOfCalibrationRange { epsilon: f64 },

    #[error("accountant failure at Renyi order {order}: {reason}")]
    AccountantFailure { order: u32, reason: String },

    #[error("invalid estimator state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
