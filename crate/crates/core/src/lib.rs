//! Meta-reweighted, pseudo-label piecewise training for image aesthetic
//! scores, on a small reverse-mode tensor engine.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
mod kernels;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
#[cfg(test)]
mod testutil;

pub use autodiff::{Gradients, Tape, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type ParamStore = nn::ParamStore<f64>;
pub type AestheticNet = nn::AestheticNet<f64>;
pub type Mrn = nn::Mrn<f64>;
pub type MetaState = meta::MetaState<f64>;
pub type Example = meta::Example<f64>;
