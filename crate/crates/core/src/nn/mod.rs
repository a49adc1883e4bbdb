//! Parameterized layers built from tape primitives.

mod batchnorm;
mod conv;
mod init;
mod layernorm;
mod linear;
mod mlp;

pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::Conv2d;
pub use init::{he_normal, seeded_rng, Rng};
pub use layernorm::{LayerNorm, LN_EPS};
pub use linear::Linear;
pub use mlp::{hidden_extent, Mlp2};

/// Whether batch statistics or running statistics drive normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
