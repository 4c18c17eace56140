//! Error types shared across the crate.

/// Crate-wide error type.
///
/// Variants map to the failure classes of the public operations: invalid
/// configuration, array-shape mismatches, out-of-domain arguments, bad input
/// data, API misuse, and the two numerical failure modes of the solvers
/// (eigenvalue crossing in the classical BO integrator, divergence of a
/// training run or a Monte Carlo realization).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("state error: {0}")]
    State(String),

    /// Two covariance eigenvalues became indistinguishable at `time`, so the
    /// closed-form BO matrices are singular there.
    #[error("eigenvalue crossing at t = {time}: {detail}")]
    Crossing { time: f64, detail: String },

    #[error("divergence in {context}: {detail}")]
    Divergence { context: String, detail: String },

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("degenerate mode: {0}")]
    DegenerateMode(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
