use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to name the offending
/// shapes, indices, or files in the message.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("label {label} at position {index} out of range for {classes} classes")]
    LabelOutOfRange {
        label: usize,
        index: usize,
        classes: usize,
    },

    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("non-finite value in {path}")]
    NonFinite { path: String },

    #[error("training diverged (loss not finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("forward trace does not match model: {0}")]
    TraceMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("evaluation is empty: confusion matrix has no counts")]
    EmptyEvaluation,

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
