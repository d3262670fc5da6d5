//! Crate-wide error type.

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto process exit codes: usage/configuration problems
/// exit 2, data and file-format problems exit 3, numeric failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("segmentation error: {0}")]
    Segment(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file at byte {offset}: {what}")]
    Corrupt { offset: u64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: impl std::fmt::Debug, rhs: impl std::fmt::Debug) -> Self {
        Error::Shape {
            op,
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
