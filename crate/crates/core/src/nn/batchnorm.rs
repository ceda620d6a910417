//! Batch normalization over the batch axis of `[m, channels]` inputs.
//!
//! Train mode normalizes with the biased batch statistics and folds them into
//! the running estimates; the running variance stores the unbiased
//! `m / (m - 1)` corrected value, the same convention the target statistics
//! pass in [`crate::bn_convert`] uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    pub mode: BnMode,
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BnContext {
    /// Statistics came from the batch (train) or were the stored running values (test).
    pub mode: BnMode,
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGradients {
    pub grad_in: Tensor,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

/// Per-channel biased mean and variance of a `[m, c]` batch (two-pass).
pub fn batch_statistics(batch: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (m, c) = (batch.rows(), batch.cols());
    let mut mean = vec![0.0; c];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(batch.row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut var = vec![0.0; c];
    for i in 0..m {
        for ((acc, v), mu) in var.iter_mut().zip(batch.row(i)).zip(&mean) {
            let d = v - mu;
            *acc += d * d;
        }
    }
    for v in &mut var {
        *v /= m as f64;
    }
    (mean, var)
}

impl BatchNormLayer {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        let layer = Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
            momentum,
            mode: BnMode::Train,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("batch norm needs at least one channel".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::Config(format!("momentum must be in (0, 1], got {}", self.momentum)));
        }
        for (name, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != self.channels {
                return Err(Error::Shape(format!(
                    "{name} has {} entries for {} channels",
                    v.len(),
                    self.channels
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("batch norm {name}")));
            }
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("running variance must be non-negative".into()));
        }
        Ok(())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        batch.ensure_matrix("batch norm input")?;
        if batch.cols() != self.channels {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels,
                batch.cols()
            )));
        }
        batch.ensure_finite("batch norm input")
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(
        &mut self,
        batch: &Tensor,
        precision: Precision,
    ) -> Result<(Tensor, BnContext)> {
        if self.mode != BnMode::Train {
            return Err(Error::InvalidArgument("forward_train on a layer in test mode".into()));
        }
        self.check_input(batch)?;
        let m = batch.rows();
        if m < 2 {
            return Err(Error::DegenerateBatch(m));
        }
        let (mean, var) = batch_statistics(batch);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let (out, normalized) = self.affine(batch, &mean, &inv_std, precision);

        let correction = m as f64 / (m as f64 - 1.0);
        let keep = 1.0 - self.momentum;
        for c in 0..self.channels {
            self.running_mean[c] = precision.round(keep * self.running_mean[c] + self.momentum * mean[c]);
            self.running_var[c] =
                precision.round(keep * self.running_var[c] + self.momentum * (correction * var[c]));
        }
        out.ensure_finite("batch norm output")?;
        Ok((
            out,
            BnContext {
                mode: BnMode::Train,
                normalized,
                inv_std,
                gamma: self.gamma.clone(),
            },
        ))
    }

    /// Normalizes with the stored running statistics. Leaves the layer untouched.
    pub fn forward_test(&self, batch: &Tensor, precision: Precision) -> Result<(Tensor, BnContext)> {
        self.check_input(batch)?;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let (out, normalized) = self.affine(batch, &self.running_mean, &inv_std, precision);
        out.ensure_finite("batch norm output")?;
        Ok((
            out,
            BnContext {
                mode: BnMode::Test,
                normalized,
                inv_std,
                gamma: self.gamma.clone(),
            },
        ))
    }

    fn affine(
        &self,
        batch: &Tensor,
        mean: &[f64],
        inv_std: &[f64],
        precision: Precision,
    ) -> (Tensor, Tensor) {
        let mut normalized = batch.clone();
        let mut out = batch.clone();
        for i in 0..batch.rows() {
            let src = batch.row(i);
            for c in 0..self.channels {
                let xhat = (src[c] - mean[c]) * inv_std[c];
                normalized.row_mut(i)[c] = xhat;
                out.row_mut(i)[c] = precision.round(self.gamma[c] * xhat + self.beta[c]);
            }
        }
        (out, normalized)
    }

    /// Forward in whatever mode the layer is set to.
    pub fn forward(&mut self, batch: &Tensor, precision: Precision) -> Result<(Tensor, BnContext)> {
        match self.mode {
            BnMode::Train => self.forward_train(batch, precision),
            BnMode::Test => self.forward_test(batch, precision),
        }
    }
}

/// Gradients of the batch-norm transform.
///
/// For a train-mode context the batch statistics are functions of the input,
/// giving the usual three-term expression. For a test-mode context the
/// transform is affine with fixed statistics.
pub fn bn_backward(ctx: &BnContext, grad_out: &Tensor) -> Result<BnGradients> {
    if grad_out.shape() != ctx.normalized.shape() {
        return Err(Error::Shape(format!(
            "batch norm backward: grad {:?} vs input {:?}",
            grad_out.shape(),
            ctx.normalized.shape()
        )));
    }
    let (m, c) = (grad_out.rows(), grad_out.cols());
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for i in 0..m {
        let dy = grad_out.row(i);
        let xhat = ctx.normalized.row(i);
        for k in 0..c {
            grad_beta[k] += dy[k];
            grad_gamma[k] += dy[k] * xhat[k];
        }
    }
    let mut grad_in = Tensor::zeros(&[m, c]);
    match ctx.mode {
        BnMode::Test => {
            for i in 0..m {
                let dy = grad_out.row(i);
                let row = grad_in.row_mut(i);
                for k in 0..c {
                    row[k] = dy[k] * ctx.gamma[k] * ctx.inv_std[k];
                }
            }
        }
        BnMode::Train => {
            let mf = m as f64;
            for i in 0..m {
                let dy = grad_out.row(i);
                let xhat = ctx.normalized.row(i);
                let row = grad_in.row_mut(i);
                for k in 0..c {
                    // sum(dxhat) = gamma * sum(dy), sum(dxhat * xhat) = gamma * grad_gamma
                    row[k] = ctx.gamma[k] * ctx.inv_std[k] / mf
                        * (mf * dy[k] - grad_beta[k] - xhat[k] * grad_gamma[k]);
                }
            }
        }
    }
    Ok(BnGradients {
        grad_in,
        grad_gamma,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(gamma: f64, beta: f64, eps: f64) -> BatchNormLayer {
        let mut l = BatchNormLayer::new(1, eps, 0.1).unwrap();
        l.gamma = vec![gamma];
        l.beta = vec![beta];
        l
    }

    #[test]
    fn train_two_row_fixture() {
        let mut l = layer(1.0, 0.0, 1.0);
        let x = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let (y, _) = l.forward_train(&x, Precision::F64).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((y.data()[0] + h).abs() < 1e-15);
        assert!((y.data()[1] - h).abs() < 1e-15);
        // M = 0.9*0 + 0.1*1, var = 0.9*1 + 0.1*(2*1)
        assert!((l.running_mean[0] - 0.1).abs() < 1e-15);
        assert!((l.running_var[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_give_beta() {
        let mut l = layer(3.0, -0.5, 1e-5);
        let x = Tensor::from_rows(&[vec![4.0], vec![4.0], vec![4.0]]).unwrap();
        let (y, _) = l.forward_train(&x, Precision::F64).unwrap();
        assert!(y.data().iter().all(|&v| v == -0.5));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut l = layer(0.0, 0.25, 1e-5);
        let x = Tensor::from_rows(&[vec![1.0], vec![-7.0], vec![3.5]]).unwrap();
        let (y, _) = l.forward_train(&x, Precision::F64).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_row_batch_rejected() {
        let mut l = layer(1.0, 0.0, 1e-5);
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(l.forward_train(&x, Precision::F64), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut l = layer(1.0, 0.0, 1e-5);
        let x = Tensor::from_rows(&[vec![1.0], vec![f64::INFINITY]]).unwrap();
        assert!(matches!(l.forward_train(&x, Precision::F64), Err(Error::NonFinite(_))));
        assert!(l.forward_test(&x, Precision::F64).is_err());
    }

    #[test]
    fn test_mode_fixture_and_purity() {
        let mut l = layer(2.0, 1.0, 1.0);
        l.running_mean = vec![0.0];
        l.running_var = vec![3.0];
        l.mode = BnMode::Test;
        let before = l.clone();
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let (a, _) = l.forward_test(&x, Precision::F64).unwrap();
        let (b, _) = l.forward_test(&x, Precision::F64).unwrap();
        assert_eq!(a.data(), &[2.0]);
        assert_eq!(a, b);
        assert_eq!(l, before);
    }

    #[test]
    fn centered_input_in_test_mode_gives_beta() {
        let mut l = layer(1.7, 0.3, 1e-5);
        l.running_mean = vec![2.5];
        l.running_var = vec![4.0];
        let x = Tensor::from_rows(&[vec![2.5]]).unwrap();
        let (y, _) = l.forward_test(&x, Precision::F64).unwrap();
        assert_eq!(y.data(), &[0.3]);
    }

    #[test]
    fn momentum_one_copies_batch_statistics() {
        let mut l = BatchNormLayer::new(2, 1e-5, 1.0).unwrap();
        l.running_mean = vec![5.0, -5.0];
        l.running_var = vec![9.0, 0.5];
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 7.0]]).unwrap();
        let (mean, var) = batch_statistics(&x);
        l.forward_train(&x, Precision::F64).unwrap();
        assert_eq!(l.running_mean, mean);
        let unbiased: Vec<f64> = var.iter().map(|v| (3.0 / 2.0) * v).collect();
        assert_eq!(l.running_var, unbiased);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut l = BatchNormLayer::new(2, 1e-5, 0.1).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.0]]).unwrap();
        let (_, ctx) = l.forward_train(&x, Precision::F64).unwrap();
        let g = bn_backward(&ctx, &Tensor::zeros(&[3, 2])).unwrap();
        assert!(g.grad_in.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_gamma.iter().all(|&v| v == 0.0));
        assert!(g.grad_beta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_blocks_input_gradient() {
        let mut l = layer(0.0, 0.0, 1e-5);
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0], vec![-2.0]]).unwrap();
        let (_, ctx) = l.forward_train(&x, Precision::F64).unwrap();
        let dy = Tensor::from_rows(&[vec![0.3], vec![-1.0], vec![2.0]]).unwrap();
        let g = bn_backward(&ctx, &dy).unwrap();
        assert!(g.grad_in.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_gamma[0] != 0.0);
    }

    #[test]
    fn backward_shape_mismatch() {
        let mut l = layer(1.0, 0.0, 1e-5);
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let (_, ctx) = l.forward_train(&x, Precision::F64).unwrap();
        assert!(bn_backward(&ctx, &Tensor::zeros(&[3, 1])).is_err());
    }
}
