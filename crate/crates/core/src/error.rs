use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset layout error: missing {}", .0.display())]
    DatasetLayout(PathBuf),

    #[error("parse error in {} at line {line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dangling link error in {} at line {line}: unknown entity {entity:?}", .path.display())]
    DanglingLink {
        path: PathBuf,
        line: usize,
        entity: String,
    },

    #[error("non-monotonic growth error: {0}")]
    NonMonotonicGrowth(String),

    #[error("relation growth unsupported error: new relation {0:?}")]
    RelationGrowth(String),

    #[error("snapshot order error: expected t={expected}, found t={found}")]
    SnapshotOrder { expected: u32, found: u32 },

    #[error("unknown entity error: id {0}")]
    UnknownEntity(usize),

    #[error("empty graph error")]
    EmptyGraph,

    #[error("numerical instability error in parameter group {0}")]
    NumericalInstability(&'static str),

    #[error("training diverged error at epoch {0}")]
    TrainingDiverged(usize),

    #[error("degenerate vector error: row {0} has zero norm")]
    DegenerateVector(usize),

    #[error("precondition violated error: {0}")]
    Precondition(String),

    #[error("empty gold set error")]
    EmptyGold,

    #[error("generation infeasible error: {0}")]
    GenerationInfeasible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("output error at {}: {source}", .path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("snapshot {index}: {source}")]
    AtSnapshot { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_snapshot(self, index: usize) -> Self {
        Error::AtSnapshot {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Output {
            path: path.into(),
            source,
        }
    }
}
