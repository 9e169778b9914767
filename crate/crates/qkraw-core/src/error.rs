//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numerical kernels and the identity engine.
///
/// No public operation returns NaN or infinity; parameter and index problems
/// are reported through this type instead.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Parameters outside the valid domain (vanishing denominator, negative
    /// radicand, non-terminating series, ...).
    Domain(String),
    /// A little q-exponential was evaluated at (numerically) a pole.
    Pole(String),
    /// A requested basis would exceed the configured dimension cap.
    Resource(String),
    /// Unknown relation or conjugation identifier.
    Catalog(String),
    /// A state tuple is not part of the basis it was looked up in.
    Index(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Pole(m) => write!(f, "pole error: {m}"),
            Error::Resource(m) => write!(f, "resource error: {m}"),
            Error::Catalog(m) => write!(f, "catalog error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}
