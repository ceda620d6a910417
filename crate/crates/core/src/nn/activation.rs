use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn forward(self, x: &Tensor, precision: Precision) -> Tensor {
        x.map(|v| {
            precision.round(match self {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
                Activation::Identity => v,
            })
        })
    }

    /// Backward given the layer input.
    pub fn backward(self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if x.shape() != grad_out.shape() {
            return Err(Error::Shape(format!(
                "activation backward: grad {:?} vs input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| match self {
                Activation::Relu => {
                    if v > 0.0 {
                        g
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => {
                    let t = v.tanh();
                    g * (1.0 - t * t)
                }
                Activation::Identity => g,
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}
