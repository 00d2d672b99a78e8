//! Building blocks for person re-identification baselines: a small
//! reverse-mode autodiff engine, the layers a BN-neck baseline needs,
//! Adam/SGD optimizers, the image data pipeline and retrieval metrics.

pub mod data;
pub mod eval;
pub mod exec;
pub mod nn;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use tensor::{Graph, Tensor, TensorError, Var};
