use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: usize, to: usize },

    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigenvector centrality did not converge after {iterations} iterations (gap {gap:.3e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("invalid attack: {0}")]
    Attack(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unobservable measurement set: {0}")]
    Unobservable(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
