use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid argument or out-of-domain input value.
    #[error("input error: {0}")]
    Input(String),
    /// NaN or infinite values where finite numbers are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A file that does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Non-finite loss during training.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("resource error: {0}")]
    Resource(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Dimension(_) | Error::Input(_) | Error::Format(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! input_err {
    ($($arg:tt)*) => { $crate::error::Error::Input(format!($($arg)*)) };
}
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(format!($($arg)*)) };
}
pub(crate) use dim_err;
pub(crate) use input_err;
pub(crate) use numeric_err;
