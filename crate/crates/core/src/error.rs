use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IceError {
    #[error("cannot normalize a zero vector")]
    DegenerateVector,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("momentum coefficient must lie in [0, 1], got {0}")]
    InvalidMomentum(f64),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need more than k1={k1} samples, found {n}")]
    InsufficientSamples { n: usize, k1: usize },

    #[error("invalid distance matrix: {0}")]
    InvalidDistanceMatrix(String),

    #[error("clustering produced no clusters")]
    NoClustersFound,

    #[error("operation requires a camera-aware memory")]
    ModeMismatch,

    #[error("need {needed} clusters for a batch, found {found}")]
    InsufficientClusters { needed: usize, found: usize },

    #[error("no proxy for cluster {0}")]
    ProxyNotFound(usize),

    #[error("batch has no negatives for some anchor")]
    NoNegatives,

    #[error("loss component {0} is not finite")]
    NonFiniteLoss(&'static str),

    #[error("ranking contains no relevant items")]
    NoRelevantItems,

    #[error("no query has a valid gallery match")]
    EmptyEvaluation,

    #[error("training aborted at epoch {0}: no clusters for more than 3 consecutive epochs")]
    TrainingAborted(usize),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
