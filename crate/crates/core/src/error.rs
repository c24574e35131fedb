use thiserror::Error;

/// Errors surfaced by the numerical pipeline.
///
/// Each variant names the module that raised it so command-line reports
/// can attribute a failure without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("energy: |E| = {0} is outside the open band (-2, 2)")]
    Domain(f64),

    #[error("field: grid of {n}x{n} nodes exceeds the cap of {cap} nodes")]
    Resource { n: usize, cap: usize },

    #[error("field: non-finite value at node ({i}, {j}), lambda = ({l1}, {l2})")]
    NonFinite { i: usize, j: usize, l1: f64, l2: f64 },

    #[error("{module}: grid mismatch: {detail}")]
    GridMismatch { module: &'static str, detail: String },

    #[error("{module}: no convergence after {iterations} iterations ({detail})")]
    NoConvergence {
        module: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("{module}: invalid argument: {detail}")]
    InvalidArgument { module: &'static str, detail: String },

    #[error("{module}: {what} needs about {bytes} bytes, above the budget of {budget} bytes")]
    Memory {
        module: &'static str,
        what: String,
        bytes: usize,
        budget: usize,
    },

    #[error("ensemble: eigensolver failed on sample {0}")]
    Eigensolver(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(module: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidArgument {
        module,
        detail: detail.into(),
    }
}
