use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Fully connected layer, `y = x Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGradients {
    pub grad_in: Option<Tensor>,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// He-normal weights (`std = sqrt(2 / in)`), zero bias.
    pub fn he_normal<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weight.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = z * std;
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.ensure_matrix("dense weight")?;
        if self.bias.shape() != [self.out_dim()] {
            return Err(Error::Shape(format!(
                "dense bias {:?} does not match {} outputs",
                self.bias.shape(),
                self.out_dim()
            )));
        }
        self.weight.ensure_finite("dense weight")?;
        self.bias.ensure_finite("dense bias")
    }

    pub fn forward(&self, x: &Tensor, precision: Precision) -> Result<Tensor> {
        x.ensure_matrix("dense input")?;
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense layer expects width {}, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let (m, out) = (x.rows(), self.out_dim());
        let mut y = Tensor::zeros(&[m, out]);
        let b = self.bias.data();
        for i in 0..m {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for (o, slot) in yi.iter_mut().enumerate() {
                let w = self.weight.row(o);
                let mut acc = b[o];
                for (a, c) in xi.iter().zip(w) {
                    acc += a * c;
                }
                *slot = precision.round(acc);
            }
        }
        y.ensure_finite("dense output")?;
        Ok(y)
    }

    /// `want_input` is false for the first trained layer, whose input gradient nobody reads.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, want_input: bool) -> Result<DenseGradients> {
        if grad_out.rows() != x.rows() || grad_out.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "dense backward: grad {:?} for input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let (m, inp, out) = (x.rows(), self.in_dim(), self.out_dim());
        let mut gw = Tensor::zeros(&[out, inp]);
        let mut gb = Tensor::zeros(&[out]);
        for i in 0..m {
            let xi = x.row(i);
            let gi = grad_out.row(i);
            for o in 0..out {
                let g = gi[o];
                gb.data_mut()[o] += g;
                if g != 0.0 {
                    for (acc, a) in gw.row_mut(o).iter_mut().zip(xi) {
                        *acc += g * a;
                    }
                }
            }
        }
        let grad_in = if want_input {
            let mut gx = Tensor::zeros(&[m, inp]);
            for i in 0..m {
                let gi = grad_out.row(i);
                let row = gx.row_mut(i);
                for (o, &g) in gi.iter().enumerate() {
                    if g != 0.0 {
                        for (acc, w) in row.iter_mut().zip(self.weight.row(o)) {
                            *acc += g * w;
                        }
                    }
                }
            }
            Some(gx)
        } else {
            None
        };
        Ok(DenseGradients {
            grad_in,
            grad_weight: gw,
            grad_bias: gb,
        })
    }
}
