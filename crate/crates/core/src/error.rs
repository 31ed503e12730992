use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FsarError>;

#[derive(Debug, Error)]
pub enum FsarError {
    #[error("split `{split}` has {available} eligible classes, need {needed}")]
    InsufficientClasses {
        split: String,
        available: usize,
        needed: usize,
    },

    #[error("class {class_id} (`{class_name}`) in split `{split}` has {available} samples, need {needed}")]
    InsufficientSamples {
        split: String,
        class_id: usize,
        class_name: String,
        available: usize,
        needed: usize,
    },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed file at {location}: {reason}")]
    Malformed { location: String, reason: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero-norm vector in {0}")]
    ZeroVector(String),

    #[error("empty class name")]
    EmptyName,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("class set mismatch between distributions")]
    ClassSetMismatch,

    #[error("enumeration bound exceeded: {rows}x{cols} (max 7x7)")]
    SizeExceeded { rows: usize, cols: usize },

    #[error("prediction mode conflicts with model config: {0}")]
    ModeConflict(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FsarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FsarError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(location: impl Into<String>, reason: impl Into<String>) -> Self {
        FsarError::Malformed {
            location: location.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status for the CLI: 2 usage, 3 data, 4 numeric, 5 io.
    pub fn exit_code(&self) -> i32 {
        use FsarError::*;
        match self {
            InvalidConfig(_) | InvalidArgument(_) | ModeConflict(_) => 2,
            InsufficientClasses { .. }
            | InsufficientSamples { .. }
            | InvalidSpec(_)
            | Malformed { .. }
            | SchemaMismatch(_)
            | DimensionMismatch(_)
            | EmptyName
            | LabelOutOfRange { .. }
            | ClassSetMismatch
            | SizeExceeded { .. } => 3,
            ZeroVector(_) | NonFinite(_) | NonFiniteLoss { .. } => 4,
            Io { .. } => 5,
        }
    }
}
