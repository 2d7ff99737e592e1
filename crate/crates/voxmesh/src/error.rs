//! Error type shared across the toolkit.
//!
//! Errors carry a category that maps onto the CLI exit codes: usage errors
//! exit 1, data errors exit 2 and numerical failures exit 3. The construction
//! macros capture the `file:line` of the call site so CLI error reports point
//! at the origin.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad invocation: unknown flags, malformed config, invalid argument.
    #[error("usage: {0}")]
    Usage(String),
    /// Invalid or inconsistent data: bad files, shape mismatches, broken meshes.
    #[error("data: {0}")]
    Data(String),
    /// Numerical failure: NaN gradients, divergence, empty iso-surfaces.
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[macro_export]
macro_rules! usage_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Usage(format!("{} [{}:{}]", format_args!($($arg)*), file!(), line!()))
    };
}

#[macro_export]
macro_rules! data_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Data(format!("{} [{}:{}]", format_args!($($arg)*), file!(), line!()))
    };
}

#[macro_export]
macro_rules! numeric_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Numeric(format!("{} [{}:{}]", format_args!($($arg)*), file!(), line!()))
    };
}
