use thiserror::Error;

use crate::graph::NodeId;

/// Errors raised by the numerical kernels, the simulator, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Lyapunov equation has no unique solution (eigenvalue sum near zero, pivot ratio {pivot_ratio:.3e})")]
    NoUniqueSolution { pivot_ratio: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("matrix is singular to working precision (sigma_min = {sigma_min:.3e}, sigma_max = {sigma_max:.3e})")]
    Singular { sigma_min: f64, sigma_max: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("unknown node or channel id {0}")]
    UnknownId(NodeId),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("controller mode error: {0}")]
    Mode(String),

    #[error("invalid scenario field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
