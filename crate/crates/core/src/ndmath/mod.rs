//! Dense-tensor numerics: a reverse-mode tape, MLPs and Adam.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use graph::{sigmoid, softplus, Gradients, Graph, Var};
pub use mlp::{Activation, Linear, Mlp, MlpVars};
pub use tensor::Tensor;
