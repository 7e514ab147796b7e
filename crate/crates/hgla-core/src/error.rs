use alloc::string::String;
use core::fmt;

/// Errors reported by the numeric core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument violates a documented precondition; the message names the
    /// offending value.
    InvalidArgument(String),
    /// Two operands that must agree in shape do not.
    ShapeMismatch(String),
    /// A guarded operation would exceed its resource budget.
    ResourceLimit(String),
    /// The requested primitive is not part of the differentiable op set.
    UnsupportedOp(String),
    /// A computation produced a non-finite value.
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::ResourceLimit(msg) => write!(f, "resource limit: {msg}"),
            Error::UnsupportedOp(msg) => write!(f, "unsupported op: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for `Error::InvalidArgument` with formatted content.
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

/// Shorthand for `Error::ShapeMismatch` with formatted content.
macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;
