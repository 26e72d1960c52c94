//! Error types shared across the core crate.

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    /// A spatial size violates a divisibility requirement (shuffle split or
    /// the 3x3 refinement grid).
    #[error("dims error: {what} = {value} is not divisible by {divisor}")]
    Dims {
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A tensor contains NaN or infinite values.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A configuration value is out of range, unparseable, or unknown.
    #[error("config error: {0}")]
    Config(String),

    /// A named parameter was requested but is absent from the store.
    #[error("missing parameter: {0}")]
    MissingParam(String),

    /// Loaded weights disagree with the model in name or shape.
    #[error("weight load error: {0}")]
    WeightLoad(String),

    /// The ground-truth mask has no foreground, so precision/recall are
    /// undefined for it.
    #[error("degenerate ground truth: mask has no foreground pixels")]
    DegenerateGt,
}

pub type CoreResult<T> = core::result::Result<T, CoreError>;
