//! Minimal deterministic MLP stack with hand-written backward passes.

mod activation;
mod arch;
mod batchnorm;
pub mod checkpoint;
mod dense;
mod loss;
mod network;

pub use activation::Activation;
pub use arch::ArchSpec;
pub use batchnorm::{
    batch_statistics, bn_backward, BatchNormLayer, BnContext, BnGradients, BnMode,
    DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use dense::{DenseGradients, DenseLayer};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use network::{
    ForwardPass, GradientBundle, Layer, Network, Part, SeedRecord, Tape, TensorKey, TensorKind,
    Trainable,
};
