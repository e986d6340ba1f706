use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value or parameter is outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A real number is not representable on the exact backend's grid.
    #[error("precision error: {value} is not a multiple of 1/{scale}")]
    Precision { value: f64, scale: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("protocol phase error at node {node}: {message}")]
    Phase { node: NodeId, message: String },

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error("node {node} did not halt within its budget of {budget} rounds")]
    BudgetExceeded { node: NodeId, budget: usize },

    /// The normal-equation matrix is singular or numerically rank deficient.
    #[error("rank error: {0}")]
    Rank(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
