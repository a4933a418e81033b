//! Dense tensors, reverse-mode differentiation, AdamW and the cosine schedule.

mod optim;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use params::{BoundParams, Param, ParamSet};
pub use schedule::CosineSchedule;
pub use tape::{segment_softmax_values, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds for {bound}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: degenerate input ({detail})")]
    DegenerateInput { op: &'static str, detail: String },
    #[error("segment {segment} has no entries")]
    EmptySegment { segment: usize },
    #[error("backward needs a one-element root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite gradient for parameter {param:?} at optimizer step {step}")]
    NonFiniteGradient { step: u64, param: String },
}
