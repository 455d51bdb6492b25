//! Minimal dense numerics for the FairPFN workspace: row-major `f64`
//! tensors, a define-then-run autodiff graph, and an Adam optimizer with a
//! warmup + cosine learning-rate schedule.

mod error;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::NumError;
pub use graph::{sigmoid, softplus, Gradients, Graph, InputShape, NodeId};
pub use optim::{clip_grad_norm, lr_at, Adam, AdamConfig, LrSchedule};
pub use params::{ParamId, ParamSet};
pub use tensor::{matmul, Tensor};
