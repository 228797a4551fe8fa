use std::path::PathBuf;

use thiserror::Error;

use crate::perfdb::{OperatorKind, Quant};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input, `line` is 1-based when it refers to a line-oriented file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid document: {0}")]
    Document(String),

    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("no latency grid for {kind} ({quant}) with key {key}")]
    MissingKey {
        kind: OperatorKind,
        quant: Quant,
        key: String,
    },

    #[error("{kind} query outside the profiled grid on axis {axis} (value {value}, grid [{lo}, {hi}])")]
    OutOfBounds {
        kind: OperatorKind,
        axis: String,
        value: u64,
        lo: u64,
        hi: u64,
    },

    #[error("unsupported operator: {0}")]
    Unsupported(String),

    #[error("invalid operator query: {0}")]
    InvalidQuery(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("inconsistent parallel config: {0}")]
    InvalidConfig(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("configuration does not fit in GPU memory: needs {needed:.0} bytes, budget {budget:.0} bytes")]
    OutOfMemory { needed: f64, budget: f64 },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("search space has {candidates} candidates, above the limit of {limit}")]
    TooManyCandidates { candidates: usize, limit: usize },

    #[error("invalid expert load: {0}")]
    InvalidLoad(String),

    #[error("unknown backend profile {backend} {version}")]
    UnknownBackend { backend: String, version: String },

    #[error("inconsistent topology: {0}")]
    Topology(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
