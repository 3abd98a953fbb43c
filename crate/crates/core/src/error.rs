use thiserror::Error;

use crate::network::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A generator or assembly parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Inputs are individually valid but inconsistent with each other,
    /// e.g. a BA graph handed to the DAG builder without its addition order.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A damaged or hand-built network cannot be executed as wired.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("shape mismatch at node {node}: {detail}")]
    Shape { node: NodeId, detail: String },

    #[error("missing weight {role} for node {node}")]
    MissingWeight { node: NodeId, role: &'static str },

    #[error("non-finite value produced at node {0}")]
    NonFinite(NodeId),

    #[error("unsupported schema {found:?}, expected {expected:?}")]
    Schema {
        found: String,
        expected: &'static str,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
