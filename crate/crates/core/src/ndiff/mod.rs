//! Minimal dense tensor arithmetic with reverse-mode automatic
//! differentiation.
//!
//! Everything is f64 and rank ≤ 2; the models built on top (an MLP and a
//! GRU with linear heads) never need more, and reproducibility matters
//! more than speed at this scale.

mod sgd;
mod tape;
mod tensor;

pub use sgd::{sgd_step, Sgd};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid_scalar;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
}
