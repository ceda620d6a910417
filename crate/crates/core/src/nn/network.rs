use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::batchnorm::{bn_backward, BatchNormLayer, BnContext, BnMode};
use super::dense::DenseLayer;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(DenseLayer),
    Activation { function: Activation },
    BatchNorm(BatchNormLayer),
}

impl Layer {
    fn output_width(&self, input: usize) -> Result<usize> {
        match self {
            Layer::Dense(d) => {
                d.validate()?;
                if d.in_dim() != input {
                    return Err(Error::Shape(format!(
                        "dense layer expects width {}, previous layer gives {input}",
                        d.in_dim()
                    )));
                }
                Ok(d.out_dim())
            }
            Layer::Activation { .. } => Ok(input),
            Layer::BatchNorm(bn) => {
                bn.validate()?;
                if bn.channels != input {
                    return Err(Error::Shape(format!(
                        "batch norm has {} channels, previous layer gives {input}",
                        bn.channels
                    )));
                }
                Ok(input)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    FeatureExtractor,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl TensorKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, TensorKind::RunningMean | TensorKind::RunningVar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TensorKind::Weight => "weight",
            TensorKind::Bias => "bias",
            TensorKind::Gamma => "gamma",
            TensorKind::Beta => "beta",
            TensorKind::RunningMean => "running_mean",
            TensorKind::RunningVar => "running_var",
        }
    }
}

/// Stable path to one tensor of a network, e.g. `feature_extractor.3.gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TensorKey {
    pub part: Part,
    pub layer: usize,
    pub kind: TensorKind,
}

impl fmt::Display for TensorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = match self.part {
            Part::FeatureExtractor => "feature_extractor",
            Part::Head => "head",
        };
        write!(f, "{part}.{}.{}", self.layer, self.kind.as_str())
    }
}

/// Which parts receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub feature_extractor: bool,
    pub head: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        feature_extractor: true,
        head: true,
    };
    pub const HEAD_ONLY: Trainable = Trainable {
        feature_extractor: false,
        head: true,
    };

    fn includes(self, part: Part) -> bool {
        match part {
            Part::FeatureExtractor => self.feature_extractor,
            Part::Head => self.head,
        }
    }
}

/// One gradient per learnable tensor of the trained parts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBundle {
    pub grads: BTreeMap<TensorKey, Tensor>,
}

impl GradientBundle {
    pub fn get(&self, key: &TensorKey) -> Option<&Tensor> {
        self.grads.get(key)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TensorKey, &Tensor)> {
        self.grads.iter()
    }
}

#[derive(Debug, Clone)]
enum LayerContext {
    Dense { input: Tensor },
    Activation { input: Tensor },
    BatchNorm(BnContext),
}

/// Per-layer contexts recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    feature_extractor: Vec<LayerContext>,
    head: Vec<LayerContext>,
    batch_rows: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Tensor,
    pub logits: Tensor,
    pub tape: Tape,
}

/// Seed provenance carried in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub feature_extractor: Vec<Layer>,
    pub head: Vec<Layer>,
    #[serde(default)]
    pub precision: Precision,
    /// Set once target-domain batch-norm conversion has been applied.
    #[serde(default)]
    pub bn_converted: bool,
    #[serde(default)]
    pub seed_lineage: Vec<SeedRecord>,
}

impl Network {
    pub fn new(input_dim: usize, feature_extractor: Vec<Layer>, head: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input_dim,
            feature_extractor,
            head,
            precision: Precision::F64,
            bn_converted: false,
            seed_lineage: Vec::new(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks adjacent widths and every layer's own invariants.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Shape("input width must be positive".into()));
        }
        let mut width = self.input_dim;
        for layer in self.feature_extractor.iter().chain(&self.head) {
            width = layer.output_width(width)?;
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        width_after(self.input_dim, &self.feature_extractor)
    }

    pub fn output_dim(&self) -> usize {
        width_after(self.feature_dim(), &self.head)
    }

    pub fn part(&self, part: Part) -> &[Layer] {
        match part {
            Part::FeatureExtractor => &self.feature_extractor,
            Part::Head => &self.head,
        }
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for layer in self.feature_extractor.iter_mut().chain(self.head.iter_mut()) {
            if let Layer::BatchNorm(bn) = layer {
                bn.mode = mode;
            }
        }
    }

    pub fn bn_count(&self) -> usize {
        self.bn_layers().len()
    }

    pub fn bn_layers(&self) -> Vec<(Part, usize, &BatchNormLayer)> {
        let mut out = Vec::new();
        for part in [Part::FeatureExtractor, Part::Head] {
            for (i, layer) in self.part(part).iter().enumerate() {
                if let Layer::BatchNorm(bn) = layer {
                    out.push((part, i, bn));
                }
            }
        }
        out
    }

    pub fn bn_layers_mut(&mut self) -> Vec<(Part, usize, &mut BatchNormLayer)> {
        let mut out = Vec::new();
        for (i, layer) in self.feature_extractor.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((Part::FeatureExtractor, i, bn));
            }
        }
        for (i, layer) in self.head.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((Part::Head, i, bn));
            }
        }
        out
    }

    /// Every tensor in the network, learnable or not, in key order.
    pub fn tensors(&self) -> Vec<(TensorKey, &[f64])> {
        let mut out = Vec::new();
        for part in [Part::FeatureExtractor, Part::Head] {
            for (layer, l) in self.part(part).iter().enumerate() {
                let key = |kind| TensorKey { part, layer, kind };
                match l {
                    Layer::Dense(d) => {
                        out.push((key(TensorKind::Weight), d.weight.data()));
                        out.push((key(TensorKind::Bias), d.bias.data()));
                    }
                    Layer::BatchNorm(bn) => {
                        out.push((key(TensorKind::Gamma), &bn.gamma[..]));
                        out.push((key(TensorKind::Beta), &bn.beta[..]));
                        out.push((key(TensorKind::RunningMean), &bn.running_mean[..]));
                        out.push((key(TensorKind::RunningVar), &bn.running_var[..]));
                    }
                    Layer::Activation { .. } => {}
                }
            }
        }
        out
    }

    /// Visits every learnable tensor of `part` mutably.
    pub fn for_each_param_mut(&mut self, part: Part, mut f: impl FnMut(TensorKey, &mut [f64])) {
        let layers = match part {
            Part::FeatureExtractor => &mut self.feature_extractor,
            Part::Head => &mut self.head,
        };
        for (layer, l) in layers.iter_mut().enumerate() {
            let key = |kind| TensorKey { part, layer, kind };
            match l {
                Layer::Dense(d) => {
                    f(key(TensorKind::Weight), d.weight.data_mut());
                    f(key(TensorKind::Bias), d.bias.data_mut());
                }
                Layer::BatchNorm(bn) => {
                    f(key(TensorKind::Gamma), &mut bn.gamma);
                    f(key(TensorKind::Beta), &mut bn.beta);
                }
                Layer::Activation { .. } => {}
            }
        }
    }

    /// Test-mode forward without recording anything. Never mutates the network.
    pub fn infer(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let features = self.run_part_test(&self.feature_extractor, x)?;
        let logits = self.run_part_test(&self.head, &features)?;
        Ok((features, logits))
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.run_part_test(&self.feature_extractor, x)
    }

    fn run_part_test(&self, layers: &[Layer], x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in layers {
            h = match layer {
                Layer::Dense(d) => d.forward(&h, self.precision)?,
                Layer::Activation { function } => function.forward(&h, self.precision),
                Layer::BatchNorm(bn) => bn.forward_test(&h, self.precision)?.0,
            };
        }
        Ok(h)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.ensure_matrix("network input")?;
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects width {}, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        x.ensure_finite("network input")
    }

    /// Forward pass that records what [`Network::backward`] needs.
    ///
    /// Every batch-norm layer runs in `bn_mode`. In train mode the running
    /// statistics are updated; in test mode nothing in the network changes
    /// and the recorded contexts describe the fixed-statistics affine map.
    pub fn forward(&mut self, x: &Tensor, bn_mode: BnMode) -> Result<ForwardPass> {
        self.check_input(x)?;
        self.set_bn_mode(bn_mode);
        let precision = self.precision;
        let (features, fe_tape) = forward_part(&mut self.feature_extractor, x, precision)?;
        let (logits, head_tape) = forward_part(&mut self.head, &features, precision)?;
        Ok(ForwardPass {
            features,
            logits,
            tape: Tape {
                feature_extractor: fe_tape,
                head: head_tape,
                batch_rows: x.rows(),
            },
        })
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. logits) through the tape.
    /// Parts not marked trainable get no entries in the bundle.
    pub fn backward(
        &self,
        tape: &Tape,
        loss_grad: &Tensor,
        trainable: Trainable,
    ) -> Result<GradientBundle> {
        if tape.feature_extractor.len() != self.feature_extractor.len()
            || tape.head.len() != self.head.len()
        {
            return Err(Error::MissingContext(
                "tape does not match the network's layers".into(),
            ));
        }
        if loss_grad.rows() != tape.batch_rows || loss_grad.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} for batch of {} rows and {} outputs",
                loss_grad.shape(),
                tape.batch_rows,
                self.output_dim()
            )));
        }
        let mut bundle = GradientBundle::default();
        let fe_first_trainable = if trainable.feature_extractor {
            first_parametrized(&self.feature_extractor)
        } else {
            None
        };
        let head_first_trainable = if trainable.head {
            first_parametrized(&self.head)
        } else {
            None
        };
        let need_features_grad = fe_first_trainable.is_some();
        let grad = backward_part(
            Part::Head,
            &self.head,
            &tape.head,
            loss_grad.clone(),
            trainable,
            if need_features_grad { Some(0) } else { head_first_trainable },
            need_features_grad,
            &mut bundle,
        )?;
        if let (Some(stop), Some(grad)) = (fe_first_trainable, grad) {
            backward_part(
                Part::FeatureExtractor,
                &self.feature_extractor,
                &tape.feature_extractor,
                grad,
                trainable,
                Some(stop),
                false,
                &mut bundle,
            )?;
        }
        Ok(bundle)
    }

    /// Replaces the head with zeros. Only defined for a single dense layer.
    pub fn zero_head(&mut self) -> Result<()> {
        match self.head.as_mut_slice() {
            [Layer::Dense(d)] => {
                d.weight.data_mut().fill(0.0);
                d.bias.data_mut().fill(0.0);
                Ok(())
            }
            _ => Err(Error::Config(
                "zero head initialization needs a single dense head layer".into(),
            )),
        }
    }

    /// Re-draws every dense layer of the head (He-normal weights, zero bias).
    pub fn randomize_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.head {
            if let Layer::Dense(d) = layer {
                *d = DenseLayer::he_normal(d.in_dim(), d.out_dim(), rng);
            }
        }
    }

    pub fn is_single_dense_head(&self) -> bool {
        matches!(self.head.as_slice(), [Layer::Dense(_)])
    }

    pub fn head_dense_mut(&mut self) -> Option<&mut DenseLayer> {
        match self.head.as_mut_slice() {
            [Layer::Dense(d)] => Some(d),
            _ => None,
        }
    }

    /// Same layer kinds and tensor shapes.
    pub fn same_architecture(&self, other: &Network) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        self.input_dim == other.input_dim
            && self.feature_extractor.len() == other.feature_extractor.len()
            && self.head.len() == other.head.len()
            && a.len() == b.len()
            && a.iter().zip(&b).all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
    }
}

fn width_after(mut width: usize, layers: &[Layer]) -> usize {
    for layer in layers {
        if let Layer::Dense(d) = layer {
            width = d.out_dim();
        }
    }
    width
}

fn first_parametrized(layers: &[Layer]) -> Option<usize> {
    layers
        .iter()
        .position(|l| matches!(l, Layer::Dense(_) | Layer::BatchNorm(_)))
}

fn forward_part(
    layers: &mut [Layer],
    x: &Tensor,
    precision: Precision,
) -> Result<(Tensor, Vec<LayerContext>)> {
    let mut h = x.clone();
    let mut tape = Vec::with_capacity(layers.len());
    for layer in layers.iter_mut() {
        let (next, ctx) = match layer {
            Layer::Dense(d) => (d.forward(&h, precision)?, LayerContext::Dense { input: h }),
            Layer::Activation { function } => (
                function.forward(&h, precision),
                LayerContext::Activation { input: h },
            ),
            Layer::BatchNorm(bn) => {
                let (out, ctx) = bn.forward(&h, precision)?;
                (out, LayerContext::BatchNorm(ctx))
            }
        };
        tape.push(ctx);
        h = next;
    }
    Ok((h, tape))
}

/// Walks `layers` backwards down to index `stop` (inclusive). Returns the
/// gradient w.r.t. the part's input when `need_input` is set.
#[allow(clippy::too_many_arguments)]
fn backward_part(
    part: Part,
    layers: &[Layer],
    tape: &[LayerContext],
    mut grad: Tensor,
    trainable: Trainable,
    stop: Option<usize>,
    need_input: bool,
    bundle: &mut GradientBundle,
) -> Result<Option<Tensor>> {
    let Some(stop) = stop else {
        return Ok(None);
    };
    let record = trainable.includes(part);
    for i in (stop..layers.len()).rev() {
        let key = |kind| TensorKey { part, layer: i, kind };
        let want_input = i > stop || need_input;
        match (&layers[i], &tape[i]) {
            (Layer::Dense(d), LayerContext::Dense { input }) => {
                let mut g = d.backward(input, &grad, want_input)?;
                // A bias feeding a train-mode BN is cancelled by the batch
                // mean; its gradient is exactly zero, not rounding noise.
                if let Some(LayerContext::BatchNorm(ctx)) = tape.get(i + 1) {
                    if ctx.mode == BnMode::Train {
                        g.grad_bias.data_mut().fill(0.0);
                    }
                }
                if record {
                    bundle.grads.insert(key(TensorKind::Weight), g.grad_weight);
                    bundle.grads.insert(key(TensorKind::Bias), g.grad_bias);
                }
                match g.grad_in {
                    Some(gi) => grad = gi,
                    None => return Ok(None),
                }
            }
            (Layer::Activation { function }, LayerContext::Activation { input }) => {
                grad = function.backward(input, &grad)?;
            }
            (Layer::BatchNorm(_), LayerContext::BatchNorm(ctx)) => {
                let g = bn_backward(ctx, &grad)?;
                if record {
                    bundle
                        .grads
                        .insert(key(TensorKind::Gamma), Tensor::vector(g.grad_gamma)?);
                    bundle
                        .grads
                        .insert(key(TensorKind::Beta), Tensor::vector(g.grad_beta)?);
                }
                grad = g.grad_in;
            }
            _ => {
                return Err(Error::MissingContext(format!(
                    "layer {i} of {part:?} has no matching saved context"
                )))
            }
        }
    }
    Ok(need_input.then_some(grad))
}
