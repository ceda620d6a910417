//! Transfer-learning laboratory for small batch-normalized MLPs.
//!
//! The crate pretrains a classifier on a synthetic source domain, then adapts
//! it to a shifted target domain with linear probing, full fine-tuning,
//! LP-FT, or DAFT (target-domain batch-norm conversion followed by joint
//! training with separate feature-extractor and head learning rates), and
//! measures how much each strategy distorts the pretrained features.

pub mod bn_convert;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod finetune;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
