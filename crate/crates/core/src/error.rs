use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: {value} is not divisible by {divisor}")]
    Divisibility {
        op: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("invalid patch geometry: {0}")]
    Geometry(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("key cache was built for {expected}, but the input is {found}")]
    CacheMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}
