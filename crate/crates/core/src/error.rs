//! Error type shared by every module in the crate.

use thiserror::Error;

use crate::graph::KeyframeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("keyframe {0} is not in the graph")]
    UnknownKeyframe(KeyframeId),

    #[error("keyframe {0} is already in the graph")]
    DuplicateKeyframe(KeyframeId),

    #[error("keyframe ids must arrive in increasing order (saw {got} after {prev})")]
    NonMonotoneId { prev: KeyframeId, got: KeyframeId },

    #[error("edge weight {weight} between {head} and {tail} is below the minimum of 1")]
    InvalidWeight {
        head: KeyframeId,
        tail: KeyframeId,
        weight: f64,
    },

    #[error("self-loop on keyframe {0}")]
    SelfLoop(KeyframeId),

    #[error("an edge of category {category} already links {head} and {tail}")]
    DuplicateEdge {
        head: KeyframeId,
        tail: KeyframeId,
        category: &'static str,
    },

    #[error("IMU edge between {head} and {tail}: IMU edges may only link consecutive keyframes")]
    NonConsecutiveImu { head: KeyframeId, tail: KeyframeId },

    #[error("duplicate node {0} in requested node order")]
    DuplicateNodeOrder(KeyframeId),

    #[error("no anchor positions to remove")]
    NoAnchor,

    #[error("anchor position {position} is outside a matrix of dimension {dim}")]
    AnchorOutOfRange { position: usize, dim: usize },

    #[error("matrix reduction would remove every node")]
    EmptyReduction,

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    AsymmetricMatrix(f64),

    #[error("a global map needs at least two keyframes, got {0}")]
    TooFewKeyframes(usize),

    #[error("local and fixed keyframe sets overlap at keyframe {0}")]
    OverlappingSets(KeyframeId),

    #[error("the new keyframe {0} may not be a member of the candidate or fixed sets")]
    NewKeyframeInSet(KeyframeId),

    #[error("matrix is singular; incremental state needs a positive-definite base")]
    SingularMatrix,

    #[error(
        "rank-1 update became numerically degenerate (pivot {0:.3e}); the state needs a refresh"
    )]
    DegenerateUpdate(f64),

    #[error("dimension mismatch: state has {expected} rows, update has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("selection from an empty candidate pool")]
    EmptyUniverse,

    #[error("budget {budget} exceeds the candidate pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("{combinations} subsets exceed the exhaustive-search guard of {guard}")]
    CombinatorialGuard { combinations: u128, guard: u128 },

    #[error("exhaustive enumeration supports at most {max} nodes, got {got}")]
    EnumerationGuard { max: usize, got: usize },

    #[error("unknown selection strategy '{0}'")]
    UnknownStrategy(String),

    #[error("stream parse error at line {line}: {message}")]
    StreamParse { line: usize, message: String },

    #[error("trace parse error at line {line}, column {column}: {message}")]
    TraceParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("slot {slot}: {source}")]
    Slot {
        slot: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the simulator slot in which it occurred.
    pub fn in_slot(self, slot: u64) -> Error {
        Error::Slot {
            slot,
            source: Box::new(self),
        }
    }

    /// Annotates an io error with the path that produced it.
    pub fn in_file(source: std::io::Error, path: &std::path::Path) -> Error {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
