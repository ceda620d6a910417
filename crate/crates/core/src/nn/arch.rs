use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::batchnorm::{BatchNormLayer, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use super::dense::DenseLayer;
use super::network::{Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::Precision;

/// Layout of an MLP classifier: `[dense -> bn -> act] * hidden` as the
/// feature extractor, then `[dense -> act] * head_hidden -> dense` as the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub activation: Activation,
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub precision: Precision,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden: vec![32, 32],
            batch_norm: true,
            activation: Activation::Relu,
            head_hidden: Vec::new(),
            classes: 4,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            precision: Precision::F64,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Config(
                "architecture needs a positive input width and at least 2 classes".into(),
            ));
        }
        if self.hidden.iter().chain(&self.head_hidden).any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network> {
        self.validate()?;
        let mut fe = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.hidden {
            fe.push(Layer::Dense(DenseLayer::he_normal(width, h, rng)));
            if self.batch_norm {
                fe.push(Layer::BatchNorm(BatchNormLayer::new(h, self.epsilon, self.momentum)?));
            }
            fe.push(Layer::Activation {
                function: self.activation,
            });
            width = h;
        }
        let mut head = Vec::new();
        for &h in &self.head_hidden {
            head.push(Layer::Dense(DenseLayer::he_normal(width, h, rng)));
            head.push(Layer::Activation {
                function: self.activation,
            });
            width = h;
        }
        head.push(Layer::Dense(DenseLayer::he_normal(width, self.classes, rng)));
        let mut net = Network::new(self.input_dim, fe, head)?;
        net.precision = self.precision;
        if self.precision == Precision::F32 {
            for part in [super::Part::FeatureExtractor, super::Part::Head] {
                net.for_each_param_mut(part, |_, v| Precision::F32.round_slice(v));
            }
        }
        Ok(net)
    }
}
