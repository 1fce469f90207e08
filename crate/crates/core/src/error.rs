use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("input value {value} at index {index} lies outside [0, 1]")]
    InputOutOfRange { index: usize, value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("sample {0} updated twice in one epoch")]
    DuplicateSample(usize),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFinite {
        epoch: usize,
        iteration: usize,
        detail: String,
    },
    #[error("{0} is undefined")]
    Undefined(String),
}

/// `format!` into an `Error::InvalidArgument`.
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

pub(crate) use {invalid, shape_err};
