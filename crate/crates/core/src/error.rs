use alloc::string::String;
use core::fmt;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    Shape(String),
    /// A precondition on the inputs does not hold (e.g. an all-zero label vector).
    Contract(String),
    /// A configuration value is out of range or inconsistent.
    Config(String),
    /// A metric is undefined for the given inputs.
    UndefinedMetric(String),
    /// A tensor carried a NaN or infinite value.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "dimension error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::UndefinedMetric(m) => write!(f, "undefined metric: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
