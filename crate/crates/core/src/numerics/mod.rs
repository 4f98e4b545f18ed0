//! Dense tensors, reverse-mode differentiation, AdamW and gradient checks.

mod attention;
mod batch;
mod graph;
mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare_with_finite_differences, grad_check, GradCheckReport, REL_FLOOR,
};
pub use batch::{apply_update, batch_gradients, minibatches, train_step, OptimSettings};
pub use attention::{causal_self_attention, multi_head_attention};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Binder, ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

