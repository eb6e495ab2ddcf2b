//! Dense tensors, a reverse-mode tape, AdamW and the cosine schedule.

pub mod graph;
pub mod kernels;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, OpKind, Var};
pub use optim::{adamw_step, cosine_anneal, AdamWConfig, OptimizerState, Param};
pub use tensor::Tensor;
