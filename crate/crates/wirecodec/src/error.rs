use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    /// A frame handed to the encoder lacks a field its op requires.
    #[error("invalid {op} frame: missing {field}")]
    InvalidFrame { op: &'static str, field: &'static str },
    #[error("malformed bytes at offset {offset}: {reason}")]
    MalformedBytes { offset: usize, reason: String },
    #[error("unknown op {0:?}")]
    UnknownOp(String),
    #[error("schema violation in {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("no common protocol version or encoding")]
    VersionMismatch,
}

impl CodecError {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        CodecError::MalformedBytes {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CodecError::SchemaViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
