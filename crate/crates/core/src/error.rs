use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node index {index} out of range for {n_nodes} nodes")]
    NodeOutOfRange { index: usize, n_nodes: usize },
    #[error("label row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("node {0} is isolated; operation requires positive degree")]
    IsolatedNode(usize),
    #[error("graph has no edges")]
    EmptyEdgeSet,
    #[error("operator kind error: {0}")]
    KindError(String),
    #[error("degenerate classes: {0}")]
    DegenerateClass(String),
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("tape misuse: {0}")]
    Tape(String),
}

impl Error {
    /// Process exit code contract: validation failures 1, numeric failures 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
