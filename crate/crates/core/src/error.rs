use thiserror::Error;

/// Errors produced by tree construction, H-arithmetic, task graph
/// construction and execution.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("geometry contains no points")]
    EmptyGeometry,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cluster {0} carries no bounding box")]
    MissingBoundingBox(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("blocks are not conformal: {0}")]
    NonConformal(String),

    #[error("singular pivot {pivot:e} at local index {index} (threshold {threshold:e})")]
    SingularPivot {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("block {0} is a leaf")]
    LeafBlock(usize),

    #[error("task is not refinable: {0}")]
    NotRefinable(String),

    #[error("task graph contains a cycle")]
    Cycle,

    #[error("execution stalled with {remaining} unexecuted tasks and no ready task")]
    Deadlock { remaining: usize },

    #[error("sparsification is not supported for combined accumulator task graphs")]
    SparsifyCombined,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
