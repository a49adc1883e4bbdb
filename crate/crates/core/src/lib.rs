//! Self-attention benchmarking on a from-scratch ResNet-18.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod nn;
mod kernels;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use backbone::{build_resnet18, ModelSpec};
pub use error::{Error, Result};
pub use nn::Mode;
pub use kernels::{CombineKind, PoolKind};
pub use param::{Module, Param, ParamId};
pub use scalar::Real;
pub use tape::{Activation, Gradients, Var};

/// Double-precision aliases; every generic type defaults to `f64` as well.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tape::Tape<f64>;
pub type ResNet = backbone::ResNet<f64>;
