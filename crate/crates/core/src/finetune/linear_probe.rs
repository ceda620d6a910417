//! L2-regularized multinomial logistic regression on frozen features.
//!
//! Minimizes `(1/n) sum_i CE(W f_i + b, y_i) + (l2 / 2) ||W||_F^2` (bias not
//! penalized) with damped Newton steps and Armijo backtracking. The l2
//! strength is picked from a grid by ID validation accuracy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::trainer::{EpochLog, TrainData, TrainLog};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, DenseLayer, Network};
use crate::tensor::Tensor;

pub const DEFAULT_L2_GRID: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// `[classes, dim]`
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gradient_inf_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProbeResult {
    /// The input network with the fitted head installed.
    pub network: Network,
    pub head: DenseLayer,
    pub l2: f64,
    pub log: TrainLog,
}

struct Problem<'a> {
    x: &'a Tensor,
    labels: &'a [usize],
    classes: usize,
    l2: f64,
}

impl Problem<'_> {
    fn width(&self) -> usize {
        self.x.cols() + 1
    }

    fn logits(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let w = self.width();
        let row = self.x.row(i);
        (0..self.classes)
            .map(|c| {
                let p = &theta[c * w..(c + 1) * w];
                p[w - 1] + row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let n = self.x.rows();
        let mut total = 0.0;
        for i in 0..n {
            let z = self.logits(theta, i);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - z[self.labels[i]];
        }
        total / n as f64 + 0.5 * self.l2 * self.weight_sq(theta)
    }

    fn weight_sq(&self, theta: &[f64]) -> f64 {
        let w = self.width();
        theta
            .iter()
            .enumerate()
            .filter(|(j, _)| j % w != w - 1)
            .map(|(_, v)| v * v)
            .sum()
    }

    fn gradient_hessian(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (n, k, w) = (self.x.rows(), self.classes, self.width());
        let dim = k * w;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let mut xt = vec![0.0; w];
        for i in 0..n {
            xt[..w - 1].copy_from_slice(self.x.row(i));
            xt[w - 1] = 1.0;
            let z = self.logits(theta, i);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            for a in 0..k {
                let r = p[a] - if a == self.labels[i] { 1.0 } else { 0.0 };
                for j in 0..w {
                    g[a * w + j] += r * xt[j];
                }
                for b in a..k {
                    let coef = if a == b { p[a] - p[a] * p[a] } else { -p[a] * p[b] };
                    if coef == 0.0 {
                        continue;
                    }
                    for j in 0..w {
                        let cj = coef * xt[j];
                        let row = a * w + j;
                        for l in 0..w {
                            h[(row, b * w + l)] += cj * xt[l];
                        }
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        g *= inv_n;
        h *= inv_n;
        // mirror the upper block triangle
        for a in 0..k {
            for b in (a + 1)..k {
                for j in 0..w {
                    for l in 0..w {
                        h[(b * w + l, a * w + j)] = h[(a * w + j, b * w + l)];
                    }
                }
            }
        }
        for a in 0..k {
            for j in 0..w - 1 {
                let idx = a * w + j;
                g[idx] += self.l2 * theta[idx];
                h[(idx, idx)] += self.l2;
            }
        }
        (g, h)
    }
}

pub fn fit_logistic(
    x: &Tensor,
    labels: &[usize],
    classes: usize,
    l2: f64,
    opts: NewtonOptions,
) -> Result<LogisticFit> {
    x.ensure_matrix("probe features")?;
    x.ensure_finite("probe features")?;
    if labels.len() != x.rows() {
        return Err(Error::Shape("labels do not match feature rows".into()));
    }
    if labels.iter().any(|&y| y >= classes) {
        return Err(Error::InvalidArgument("label outside class range".into()));
    }
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(Error::Config(format!("l2 strength must be >= 0, got {l2}")));
    }
    let prob = Problem {
        x,
        labels,
        classes,
        l2,
    };
    let dim = classes * prob.width();
    let mut theta = vec![0.0; dim];
    let mut f = prob.objective(&theta);
    let mut iterations = 0;
    let mut g_inf = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (g, h) = prob.gradient_hessian(&theta);
        g_inf = g.amax();
        if g_inf < opts.gradient_tolerance {
            break;
        }
        iterations += 1;
        let mut damping = 1e-10;
        let step = loop {
            let mut hd = h.clone();
            for i in 0..dim {
                hd[(i, i)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break -ch.solve(&g);
            }
            damping *= 10.0;
            if damping > 1e6 {
                return Err(Error::NonFinite("logistic Newton system".into()));
            }
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ft = prob.objective(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let w = prob.width();
    let d = w - 1;
    let mut weight = Tensor::zeros(&[classes, d]);
    let mut bias = vec![0.0; classes];
    for c in 0..classes {
        weight.row_mut(c).copy_from_slice(&theta[c * w..c * w + d]);
        bias[c] = theta[c * w + d];
    }
    Ok(LogisticFit {
        weight,
        bias,
        objective: f,
        iterations,
        gradient_inf_norm: g_inf,
    })
}

fn fit_accuracy(fit: &LogisticFit, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let head = DenseLayer {
        weight: fit.weight.clone(),
        bias: Tensor::vector(fit.bias.clone())?,
    };
    let logits = head.forward(x, crate::tensor::Precision::F64)?;
    let hits = argmax_rows(&logits)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fits a logistic head on frozen test-mode features for each l2 value and
/// keeps the one with the best ID validation accuracy (earliest on ties).
pub fn run_linear_probe(net: &Network, data: TrainData<'_>, l2_grid: &[f64]) -> Result<LinearProbeResult> {
    if l2_grid.is_empty() {
        return Err(Error::Config("l2 grid is empty".into()));
    }
    if !net.is_single_dense_head() {
        return Err(Error::Config("linear probing needs a single dense head layer".into()));
    }
    let classes = net.output_dim();
    let train_x = net.features(&data.train.features)?;
    let val_x = net.features(&data.val.features)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, LogisticFit)> = None;
    for (i, &l2) in l2_grid.iter().enumerate() {
        let fit = fit_logistic(&train_x, &data.train.labels, classes, l2, NewtonOptions::default())?;
        let val_accuracy = fit_accuracy(&fit, &val_x, &data.val.labels)?;
        log.epochs.push(EpochLog {
            epoch: i,
            train_loss: fit.objective,
            val_accuracy,
            lr_theta: 0.0,
            lr_w: 0.0,
            l2: Some(l2),
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            log.best_epoch = i;
            best = Some((val_accuracy, l2, fit));
        }
    }
    let (_, l2, fit) = best.expect("non-empty grid");
    let head = DenseLayer {
        weight: fit.weight,
        bias: Tensor::vector(fit.bias)?,
    };
    let mut network = net.clone();
    let precision = network.precision;
    if let Some(d) = network.head_dense_mut() {
        *d = head.clone();
        precision.round_slice(d.weight.data_mut());
        precision.round_slice(d.bias.data_mut());
    }
    Ok(LinearProbeResult {
        network,
        head,
        l2,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Tensor, Vec<usize>) {
        let rows = vec![
            vec![2.0, 0.1],
            vec![1.5, -0.3],
            vec![3.0, 0.5],
            vec![-2.0, 0.2],
            vec![-1.0, -0.4],
            vec![-2.5, 0.0],
        ];
        (Tensor::from_rows(&rows).unwrap(), vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn separable_tiny_l2_fits_training_set() {
        let (x, y) = separable();
        let fit = fit_logistic(&x, &y, 2, 1e-6, NewtonOptions::default()).unwrap();
        assert_eq!(fit_accuracy(&fit, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn huge_l2_shrinks_weights() {
        let (x, y) = separable();
        let fit = fit_logistic(&x, &y, 2, 1e8, NewtonOptions::default()).unwrap();
        assert!(fit.weight.data().iter().all(|w| w.abs() < 1e-6));
        // balanced classes: bias difference ~ 0, predictions uniform
        assert!((fit.bias[0] - fit.bias[1]).abs() < 1e-6);
    }

    #[test]
    fn gradient_converges() {
        let (x, y) = separable();
        let fit = fit_logistic(&x, &y, 2, 0.1, NewtonOptions::default()).unwrap();
        assert!(fit.gradient_inf_norm < 1e-10);
    }
}
