//! Dense `f64` tensors and a recording tape with hand-written backward rules.

pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore};
pub use tape::{softmax_rows_value, BackwardRule, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::norm;
pub(crate) use tensor::dot;

/// Failures raised by tensor operations and the tape.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("softmax row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("zero-norm vector at entity index {index}")]
    ZeroNorm { index: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("tape already consumed by a previous backward pass")]
    StaleTape,
}
