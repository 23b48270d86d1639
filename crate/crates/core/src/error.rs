use alloc::string::String;

/// Errors raised anywhere in the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite output for input shapes {shapes}")]
    NonFinite { op: &'static str, shapes: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        $crate::error::Error::Shape { op: $op, detail: alloc::format!($($arg)*) }
    };
}

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Param(alloc::format!($($arg)*))
    };
}

pub(crate) use param_err;
pub(crate) use shape_err;
