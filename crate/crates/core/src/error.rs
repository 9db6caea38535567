//! Crate-wide error type.

/// Errors produced by any stage of the hiding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    BadDimensions { op: &'static str, msg: String },

    #[error("quality {quality} outside valid range {min}..={max}")]
    QualityOutOfRange { quality: i64, min: i64, max: i64 },

    #[error("external codec failed: {context}")]
    CodecFailed { context: String },

    #[error("codec changed dimensions from {expected_w}x{expected_h} to {got_w}x{got_h}")]
    CodecDimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("attack failed: {0}")]
    Attack(String),

    #[error("non-finite value produced by {what}")]
    NonFinite { what: String },

    #[error("non-finite {what} at step {step}")]
    NonFiniteLoss { what: String, step: usize },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },

    #[error("empty dataset: {path}")]
    EmptyDataset { path: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("message: {0}")]
    Message(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
