use alloc::string::String;

/// Errors raised by the registration core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("volume too small: {0}")]
    TooSmall(String),
    #[error("empty node grid")]
    EmptyGrid,
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("class {0} absent from at least one volume")]
    ClassAbsent(u32),
    #[error("linear interpolation is not defined for label volumes")]
    LinearOnLabels,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
