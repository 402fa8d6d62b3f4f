//! Error type shared across the library.
//!
//! Errors fall into two classes that callers (notably the CLI) treat
//! differently: configuration errors (bad dimensions, non-positive
//! regularization, malformed input files) and numerical failures (failed
//! convergence, divergence, singular or indefinite matrices).

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: inconsistent dimensions, non-positive
    /// regularization strengths, negative noise variances, and similar.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data (CSV/JSON parse failures, wrong headers).
    #[error("invalid input: {0}")]
    Parse(String),

    /// File system failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(String),

    /// Numerical failure: no convergence, divergence during optimization,
    /// singular or indefinite matrices where definiteness is required.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Build a configuration error from anything printable.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Build a parse error from anything printable.
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Build a numerical-failure error from anything printable.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI maps this error to: 2 for configuration
    /// and input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_config_from_numerical() {
        assert_eq!(Error::config("bad dims").exit_code(), 2);
        assert_eq!(Error::parse("bad csv").exit_code(), 2);
        assert_eq!(Error::from(std::io::Error::other("nope")).exit_code(), 2);
        assert_eq!(Error::numerical("diverged").exit_code(), 3);
    }

    #[test]
    fn messages_carry_context() {
        let e = Error::config("gamma_u must be positive, got -1");
        assert!(e.to_string().contains("gamma_u"));
    }
}
