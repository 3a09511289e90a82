use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    /// The target frame has no unknown pixels to centre a crop on.
    #[error("sample skipped: {0}")]
    SkipSample(String),
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("motion field required for this metric is missing")]
    MissingMotion,
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
