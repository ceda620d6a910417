//! Target-domain batch-norm conversion.
//!
//! The pretrained network is run in test mode over mini-batches of target
//! data. At every BN layer the per-batch mean and biased variance of the
//! layer input are collected and averaged into
//!
//! ```text
//! M_t = E_B[mu_t]        Sigma_t = m / (m - 1) * E_B[sigma_t^2]
//! ```
//!
//! and each layer is rewritten so that its test-mode map is unchanged:
//!
//! ```text
//! gamma_t = gamma_s * sqrt(Sigma_t + eps) / sqrt(Sigma_s + eps)
//! beta_t  = beta_s + gamma_s * (M_t - M_s) / sqrt(Sigma_s + eps)
//! ```
//!
//! after which `(M_s, Sigma_s)` are replaced by `(M_t, Sigma_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{batch_statistics, BatchNormLayer, Layer, Network, Part};
use crate::tensor::{Precision, Tensor};

/// Max-abs tolerance on test-mode outputs before vs after conversion.
pub const PRESERVATION_TOL_F64: f64 = 1e-9;
pub const PRESERVATION_TOL_F32: f64 = 1e-4;

pub fn preservation_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F64 => PRESERVATION_TOL_F64,
        Precision::F32 => PRESERVATION_TOL_F32,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStatistics {
    pub part: Part,
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStatistics {
    pub layers: Vec<LayerStatistics>,
    pub batches_seen: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConversion {
    pub part: Part,
    pub layer: usize,
    pub gamma_before: Vec<f64>,
    pub gamma_after: Vec<f64>,
    pub beta_before: Vec<f64>,
    pub beta_after: Vec<f64>,
    pub mean_before: Vec<f64>,
    pub mean_after: Vec<f64>,
    pub var_before: Vec<f64>,
    pub var_after: Vec<f64>,
}

impl LayerConversion {
    pub fn is_identity(&self) -> bool {
        self.gamma_before == self.gamma_after
            && self.beta_before == self.beta_after
            && self.mean_before == self.mean_after
            && self.var_before == self.var_after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionRecord {
    pub layers: Vec<LayerConversion>,
    /// Largest disagreement between the old and new per-layer test-mode maps
    /// over probe points at the old and new means and one standard deviation
    /// either side; replaced by the network-level figure when a probe set is
    /// checked with [`verify_function_preservation`].
    pub max_test_mode_discrepancy: f64,
}

impl ConversionRecord {
    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(LayerConversion::is_identity)
    }
}

/// Runs `net` in test mode over `batches` and collects per-BN-layer input
/// statistics. The network is not modified.
pub fn estimate_target_statistics(net: &Network, batches: &[Tensor]) -> Result<TargetStatistics> {
    if net.bn_count() == 0 {
        return Err(Error::NoBatchNorm);
    }
    let Some(first) = batches.first() else {
        return Err(Error::EmptyDataset("no target batches for statistics".into()));
    };
    let m = first.rows();
    if m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    if let Some(b) = batches.iter().find(|b| b.rows() != m) {
        return Err(Error::InvalidArgument(format!(
            "target batches must share one size: saw {m} and {}",
            b.rows()
        )));
    }

    let mut sums: Vec<LayerStatistics> = net
        .bn_layers()
        .into_iter()
        .map(|(part, layer, bn)| LayerStatistics {
            part,
            layer,
            mean: vec![0.0; bn.channels],
            var: vec![0.0; bn.channels],
        })
        .collect();

    for batch in batches {
        if batch.cols() != net.input_dim {
            return Err(Error::Shape(format!(
                "target batch width {} vs network input {}",
                batch.cols(),
                net.input_dim
            )));
        }
        batch.ensure_finite("target batch")?;
        let mut h = batch.clone();
        let mut slot = 0;
        for layer in net.feature_extractor.iter().chain(&net.head) {
            h = match layer {
                Layer::Dense(d) => d.forward(&h, net.precision)?,
                Layer::Activation { function } => function.forward(&h, net.precision),
                Layer::BatchNorm(bn) => {
                    let (mu, var) = batch_statistics(&h);
                    let acc = &mut sums[slot];
                    for c in 0..bn.channels {
                        acc.mean[c] += mu[c];
                        acc.var[c] += var[c];
                    }
                    slot += 1;
                    bn.forward_test(&h, net.precision)?.0
                }
            };
        }
    }

    let nb = batches.len() as f64;
    let correction = m as f64 / (m as f64 - 1.0);
    for s in &mut sums {
        for v in &mut s.mean {
            *v /= nb;
        }
        for v in &mut s.var {
            *v = (correction * (*v / nb)).max(0.0);
        }
    }
    Ok(TargetStatistics {
        layers: sums,
        batches_seen: batches.len(),
        batch_size: m,
    })
}

/// Rewrites every BN layer of `net` to the target statistics in `stats`.
pub fn convert_bn(net: &mut Network, stats: &TargetStatistics) -> Result<ConversionRecord> {
    if net.bn_count() == 0 {
        return Err(Error::NoBatchNorm);
    }
    // Validate coverage before touching anything.
    for (part, layer, bn) in net.bn_layers() {
        let s = find_stats(stats, part, layer)?;
        if s.mean.len() != bn.channels || s.var.len() != bn.channels {
            return Err(Error::Shape(format!(
                "statistics for {part:?} layer {layer} have {} channels, layer has {}",
                s.mean.len(),
                bn.channels
            )));
        }
        if s.var.iter().any(|&v| v < 0.0 || !v.is_finite()) || s.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "statistics for {part:?} layer {layer} are not finite / non-negative"
            )));
        }
    }

    let precision = net.precision;
    let mut layers = Vec::new();
    let mut max_disc: f64 = 0.0;
    for (part, layer, bn) in net.bn_layers_mut() {
        let s = find_stats(stats, part, layer)?;
        let before = bn.clone();
        convert_layer(bn, &s.mean, &s.var, precision);
        max_disc = max_disc.max(layer_discrepancy(&before, bn));
        layers.push(LayerConversion {
            part,
            layer,
            gamma_before: before.gamma,
            gamma_after: bn.gamma.clone(),
            beta_before: before.beta,
            beta_after: bn.beta.clone(),
            mean_before: before.running_mean,
            mean_after: bn.running_mean.clone(),
            var_before: before.running_var,
            var_after: bn.running_var.clone(),
        });
    }
    net.bn_converted = true;
    Ok(ConversionRecord {
        layers,
        max_test_mode_discrepancy: max_disc,
    })
}

fn find_stats(stats: &TargetStatistics, part: Part, layer: usize) -> Result<&LayerStatistics> {
    stats
        .layers
        .iter()
        .find(|s| s.part == part && s.layer == layer)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("no target statistics for {part:?} layer {layer}"))
        })
}

/// Applies the conversion to one layer in place.
pub fn convert_layer(bn: &mut BatchNormLayer, mean_t: &[f64], var_t: &[f64], precision: Precision) {
    for c in 0..bn.channels {
        let scale_s = (bn.running_var[c] + bn.epsilon).sqrt();
        let scale_t = (var_t[c] + bn.epsilon).sqrt();
        let gamma_s = bn.gamma[c];
        bn.gamma[c] = precision.round(gamma_s * (scale_t / scale_s));
        bn.beta[c] = precision.round(bn.beta[c] + gamma_s * ((mean_t[c] - bn.running_mean[c]) / scale_s));
        bn.running_mean[c] = precision.round(mean_t[c]);
        bn.running_var[c] = precision.round(var_t[c]);
    }
}

fn layer_discrepancy(before: &BatchNormLayer, after: &BatchNormLayer) -> f64 {
    let map = |bn: &BatchNormLayer, c: usize, z: f64| {
        bn.gamma[c] * (z - bn.running_mean[c]) / (bn.running_var[c] + bn.epsilon).sqrt() + bn.beta[c]
    };
    let mut worst: f64 = 0.0;
    for c in 0..before.channels {
        let mut probes = Vec::with_capacity(6);
        for bn in [before, after] {
            let sd = bn.running_var[c].sqrt();
            let mu = bn.running_mean[c];
            probes.extend([mu, mu - sd, mu + sd]);
        }
        for z in probes {
            worst = worst.max((map(before, c, z) - map(after, c, z)).abs());
        }
    }
    worst
}

/// Max-abs difference of test-mode features and logits of two networks over
/// the probe batches.
pub fn verify_function_preservation(
    before: &Network,
    after: &Network,
    probes: &[Tensor],
) -> Result<f64> {
    if !before.same_architecture(after) {
        return Err(Error::ArchitectureMismatch(
            "networks differ in layers or tensor shapes".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for probe in probes {
        let (fa, la) = before.infer(probe)?;
        let (fb, lb) = after.infer(probe)?;
        worst = worst.max(fa.max_abs_diff(&fb)?).max(la.max_abs_diff(&lb)?);
    }
    Ok(worst)
}

/// Estimate, convert, and check on `probes`; fails without modifying `net`
/// when the discrepancy exceeds the precision's tolerance.
pub fn convert_verified(
    net: &mut Network,
    stats: &TargetStatistics,
    probes: &[Tensor],
) -> Result<ConversionRecord> {
    let mut converted = net.clone();
    let mut record = convert_bn(&mut converted, stats)?;
    let disc = verify_function_preservation(net, &converted, probes)?;
    record.max_test_mode_discrepancy = record.max_test_mode_discrepancy.max(disc);
    let tol = preservation_tolerance(net.precision);
    if record.max_test_mode_discrepancy > tol {
        return Err(Error::ToleranceBreach {
            discrepancy: record.max_test_mode_discrepancy,
            tolerance: tol,
        });
    }
    *net = converted;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn bn_only(gamma: f64, beta: f64, mean: f64, var: f64, eps: f64) -> Network {
        let mut bn = BatchNormLayer::new(1, eps, 0.1).unwrap();
        bn.gamma = vec![gamma];
        bn.beta = vec![beta];
        bn.running_mean = vec![mean];
        bn.running_var = vec![var];
        Network::new(1, vec![Layer::BatchNorm(bn)], vec![]).unwrap()
    }

    fn single_stats(mean: f64, var: f64) -> TargetStatistics {
        TargetStatistics {
            layers: vec![LayerStatistics {
                part: Part::FeatureExtractor,
                layer: 0,
                mean: vec![mean],
                var: vec![var],
            }],
            batches_seen: 1,
            batch_size: 2,
        }
    }

    fn bn_params(net: &Network) -> (f64, f64, f64, f64) {
        let (_, _, bn) = net.bn_layers()[0];
        (bn.gamma[0], bn.beta[0], bn.running_mean[0], bn.running_var[0])
    }

    #[test]
    fn two_batch_fixture() {
        let net = bn_only(1.0, 0.0, 0.0, 1.0, 1e-5);
        let batches = vec![
            Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            Tensor::from_rows(&[vec![3.0], vec![5.0]]).unwrap(),
        ];
        let stats = estimate_target_statistics(&net, &batches).unwrap();
        assert_eq!(stats.layers[0].mean, vec![2.75]);
        assert_eq!(stats.layers[0].var, vec![1.25]);
        assert_eq!(stats.batches_seen, 2);
        assert_eq!(stats.batch_size, 2);
    }

    #[test]
    fn single_batch_is_its_own_statistics() {
        let net = bn_only(1.0, 0.0, 0.0, 1.0, 1e-5);
        let b = Tensor::from_rows(&[vec![1.0], vec![4.0], vec![7.0]]).unwrap();
        let stats = estimate_target_statistics(&net, std::slice::from_ref(&b)).unwrap();
        let (mu, var) = batch_statistics(&b);
        assert_eq!(stats.layers[0].mean, mu);
        assert_eq!(stats.layers[0].var, vec![(3.0 / 2.0) * var[0]]);
    }

    #[test]
    fn estimation_errors() {
        let net = bn_only(1.0, 0.0, 0.0, 1.0, 1e-5);
        assert!(matches!(estimate_target_statistics(&net, &[]), Err(Error::EmptyDataset(_))));
        let mixed = vec![
            Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
        ];
        assert!(estimate_target_statistics(&net, &mixed).is_err());
        let plain = Network::new(1, vec![Layer::Dense(DenseLayer::zeros(1, 1))], vec![]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(estimate_target_statistics(&plain, &[b]), Err(Error::NoBatchNorm)));
    }

    #[test]
    fn estimation_leaves_network_unchanged() {
        let net = bn_only(1.5, 0.2, 0.3, 2.0, 1e-5);
        let copy = net.clone();
        let b = Tensor::from_rows(&[vec![1.0], vec![4.0]]).unwrap();
        estimate_target_statistics(&net, &[b]).unwrap();
        assert_eq!(net, copy);
    }

    #[test]
    fn conversion_spot_values() {
        let mut net = bn_only(2.0, 1.0, 0.0, 3.0, 1.0);
        let rec = convert_bn(&mut net, &single_stats(1.0, 8.0)).unwrap();
        assert_eq!(bn_params(&net), (3.0, 2.0, 1.0, 8.0));
        assert!(net.bn_converted);
        assert!(!rec.is_identity());
        assert!(rec.max_test_mode_discrepancy < 1e-12);
    }

    #[test]
    fn no_shift_is_identity() {
        let mut net = bn_only(0.7, -0.4, 1.3, 2.2, 1e-5);
        let rec = convert_bn(&mut net, &single_stats(1.3, 2.2)).unwrap();
        assert_eq!(bn_params(&net), (0.7, -0.4, 1.3, 2.2));
        assert!(rec.is_identity());
    }

    #[test]
    fn zero_gamma_ignores_shift() {
        let mut net = bn_only(0.0, 0.6, 0.0, 1.0, 1e-5);
        convert_bn(&mut net, &single_stats(5.0, 9.0)).unwrap();
        let (g, b, _, _) = bn_params(&net);
        assert_eq!((g, b), (0.0, 0.6));
    }

    #[test]
    fn missing_layer_statistics() {
        let mut net = bn_only(1.0, 0.0, 0.0, 1.0, 1e-5);
        let mut stats = single_stats(0.0, 1.0);
        stats.layers[0].layer = 4;
        assert!(convert_bn(&mut net, &stats).is_err());
        assert!(!net.bn_converted);
    }

    #[test]
    fn perturbation_is_detected() {
        let fe = vec![
            Layer::Dense(DenseLayer::zeros(2, 2)),
            Layer::BatchNorm(BatchNormLayer::new(2, 1e-5, 0.1).unwrap()),
            Layer::Activation {
                function: Activation::Tanh,
            },
        ];
        let mut net = Network::new(2, fe, vec![]).unwrap();
        if let Layer::Dense(d) = &mut net.feature_extractor[0] {
            d.weight.data_mut().copy_from_slice(&[1.0, 0.5, -0.3, 2.0]);
        }
        let probe = Tensor::from_rows(&[vec![0.1, 0.2], vec![1.0, -1.0], vec![3.0, 0.0]]).unwrap();
        let stats = estimate_target_statistics(&net, std::slice::from_ref(&probe)).unwrap();
        let mut after = net.clone();
        convert_bn(&mut after, &stats).unwrap();
        let d = verify_function_preservation(&net, &after, std::slice::from_ref(&probe)).unwrap();
        assert!(d <= PRESERVATION_TOL_F64);
        if let Layer::BatchNorm(bn) = &mut after.feature_extractor[1] {
            bn.beta[0] += 1e-3;
        }
        let d = verify_function_preservation(&net, &after, &[probe]).unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn architecture_mismatch() {
        let a = bn_only(1.0, 0.0, 0.0, 1.0, 1e-5);
        let b = Network::new(1, vec![Layer::Dense(DenseLayer::zeros(1, 1))], vec![]).unwrap();
        assert!(matches!(
            verify_function_preservation(&a, &b, &[]),
            Err(Error::ArchitectureMismatch(_))
        ));
    }
}
