//! Reverse-mode automatic differentiation over dense `f64` tensors, with the
//! handful of primitives the recurrent models need and an Adam optimizer.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{sigmoid, GradStore, Gradients, Graph, NodeId, ParamId, ParamStore};
pub use lstm::{glorot, lstm_cell, Lstm, LstmNodes, GATES};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
