// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;

/// Errors raised by the numerical core.
///
/// Variants split into two families: input validation (bad shapes, out of
/// range parameters, malformed bytes) and numerical failure (degenerate data,
/// optimizer could not find an interior optimum). [`Error::is_numerical`]
/// tells them apart so front ends can map them to distinct exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("bad magic bytes {0:?}, expected \"LMRX\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: header declares {expected} bytes of data, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("no interior maximum in bracket [{lo}, {hi}] (optimum at {at})")]
    NoInteriorMaximum { lo: f64, hi: f64, at: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerics themselves rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::NoInteriorMaximum { .. } | Error::Numerical(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
