use sda_nn::NnError;
use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    /// Input outside an operation's domain (bad geometry, occupied cell, width mismatch).
    #[error("domain error: {0}")]
    Domain(String),
    /// Non-finite values during sampling or optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Incompatible artifacts: checkpoint/config mismatches, malformed logs.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn domain(msg: impl Into<String>) -> Self {
        SimError::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        SimError::Contract(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SimError::Numerical(msg.into())
    }
}
