use thiserror::Error;

/// Errors produced by the tracker library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands with incompatible dimensions were combined.
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A value outside the operation's contract (degenerate box, bad size...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Autodiff misuse, e.g. backward on an empty tape or a non-scalar loss.
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// A config field failed validation; `field` is the dotted path.
    #[error("config error at {field}: {reason}")]
    Config { field: String, reason: String },

    /// Malformed or truncated checkpoint bytes.
    #[error("checkpoint format error at byte {offset}: {reason}")]
    CheckpointFormat { offset: usize, reason: String },

    /// Checkpoint parses but does not match the model architecture.
    #[error("checkpoint architecture mismatch for '{name}': expected {expected}, found {found}")]
    CheckpointArch {
        name: String,
        expected: String,
        found: String,
    },

    /// Sequence directory or ground-truth file violates the expected layout.
    #[error("{path}: line {line}: {reason}")]
    SequenceFormat {
        path: String,
        line: usize,
        reason: String,
    },

    /// Training produced a NaN/Inf loss.
    #[error("non-finite loss at step {step} (loss = {value})")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {reason}")]
    Image { path: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
