//! Error types. The CLI maps these onto exit codes: usage/config errors
//! exit 1, data errors exit 2, numeric errors exit 3.

use thiserror::Error;

/// Errors from tensor construction and operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} invalid or empty for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: invalid configuration: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("backward() requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    Numeric(#[from] NumericError),
}

/// Non-finite values surfaced during forward or optimization, with the
/// offending parameter path where known.
#[derive(Debug, Error)]
#[error("non-finite value in {path}: {detail}")]
pub struct NumericError {
    pub path: String,
    pub detail: String,
}

/// Errors from event-stream parsing and dataset handling.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty event stream")]
    EmptyStream,
    #[error("event ({x}, {y}, t={t}, p={p}) out of bounds for {width}x{height} sensor")]
    EventOutOfBounds {
        x: u32,
        y: u32,
        t: u64,
        p: i8,
        width: u32,
        height: u32,
    },
    #[error("events not sorted by timestamp at index {index}")]
    Unsorted { index: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("unknown class id {class_id} (generator has {num_classes} classes)")]
    UnknownClass { class_id: usize, num_classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Checkpoint serialization errors; each failure mode is distinct so the
/// caller can tell corruption from config mismatch.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("parameter {name}: stored shape {stored:?} does not match model shape {expected:?}")]
    ParamShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("parameter {name}: dtype tag {tag} does not match model scalar type")]
    DtypeMismatch { name: String, tag: u8 },
    #[error("parameter {name} missing from checkpoint")]
    MissingParam { name: String },
    #[error("checkpoint has unknown parameter {name}")]
    UnknownParam { name: String },
    #[error("malformed config block: {0}")]
    BadConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Configuration errors (bad flags, invalid config files, invariant
/// violations in user-supplied settings).
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("failed to parse config {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Top-level error for harness and CLI operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl Error {
    /// CLI exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Checkpoint(_) => 2,
            Error::Numeric(_) => 3,
            Error::Tensor(TensorError::Numeric(_)) => 3,
            // Remaining tensor errors are misconfigurations surfaced at
            // run time (shape mismatches from a bad config).
            Error::Tensor(_) => 1,
        }
    }
}
