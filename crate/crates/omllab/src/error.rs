//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by graph construction and differentiation.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("leaf {index} passed to backward does not require gradients")]
    LeafWithoutGrad { index: usize },
    #[error("leaf {index} passed to backward more than once")]
    DuplicateLeaf { index: usize },
    #[error("values belong to different graphs")]
    CrossGraph,
    #[error("{op}: class label {label} out of range for {classes} classes")]
    LabelOutOfRange { op: &'static str, label: usize, classes: usize },
}

/// Errors raised by dataset construction and ingestion.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to decode image {path}: {detail}")]
    Decode { path: String, detail: String },
    #[error("dataset has {available} classes, {requested} requested")]
    InsufficientClasses { available: usize, requested: usize },
    #[error("class {class} has {available} usable samples, {requested} requested")]
    InsufficientImages { class: String, available: usize, requested: usize },
    #[error("trajectory length {k} is not divisible by {blocks} blocks")]
    IndivisibleTrajectory { k: usize, blocks: usize },
    #[error("{per_class} samples per class do not chunk into batches of {batch}")]
    IndivisibleBatch { per_class: usize, batch: usize },
    #[error("function index {index} out of range 1..={count}")]
    FunctionIndexOutOfRange { index: usize, count: usize },
    #[error("dataset root {path} holds no usable classes")]
    EmptyDataset { path: String },
}

/// Errors raised by training loops (meta-training and online training).
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss at step {step}")]
    NumericAtStep { step: usize },
    #[error("meta-gradient diverged at step {step} (norm {norm:.3e})")]
    Divergence { step: usize, norm: f64 },
}

/// Errors raised by the evaluation protocol.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("learning-rate sweep failed: every candidate diverged")]
    SweepAllDiverged,
    #[error("learning-rate grid is empty")]
    EmptyGrid,
}

/// Errors raised by config parsing and validation.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unknown preset `{0}` (known: sine-paper, sine-desk, split-desk)")]
    UnknownPreset(String),
}
