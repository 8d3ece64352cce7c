use thiserror::Error;

/// Errors raised by the aggregation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The predict/observe protocol was driven out of order.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Vectors of incompatible dimension were combined.
    #[error("dimension mismatch for {what}: got {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    /// An expert id is not known to a ledger.
    #[error("unknown expert {0}")]
    UnknownExpert(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
