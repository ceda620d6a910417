use std::collections::BTreeMap;

use crate::nn::{GradientBundle, Network, Part, TensorKey};

/// SGD with heavy-ball momentum and L2 weight decay:
///
/// ```text
/// g' = g + weight_decay * p
/// v  = momentum * v + g'
/// p  = p - lr * v
/// ```
///
/// The two parameter groups (feature extractor, head) take separate learning
/// rates. Tensors without a gradient in the bundle are not touched.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<TensorKey, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &GradientBundle, lr_feature: f64, lr_head: f64) {
        let precision = net.precision;
        let (momentum, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        for (part, lr) in [(Part::FeatureExtractor, lr_feature), (Part::Head, lr_head)] {
            net.for_each_param_mut(part, |key, param| {
                let Some(g) = grads.get(&key) else {
                    return;
                };
                let v = velocity.entry(key).or_insert_with(|| vec![0.0; param.len()]);
                for ((p, &g), v) in param.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                    *v = momentum * *v + (g + wd * *p);
                    if lr != 0.0 {
                        *p = precision.round(*p - lr * *v);
                    }
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseLayer, Layer, Trainable};
    use crate::tensor::Tensor;

    #[test]
    fn momentum_accumulates() {
        let mut d = DenseLayer::zeros(1, 1);
        d.weight.data_mut()[0] = 1.0;
        let mut net = Network::new(1, vec![], vec![Layer::Dense(d)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let mut sgd = Sgd::new(0.5, 0.0);
        let pass = net.forward(&x, crate::nn::BnMode::Train).unwrap();
        let g = net
            .backward(&pass.tape, &Tensor::from_rows(&[vec![1.0]]).unwrap(), Trainable::ALL)
            .unwrap();
        sgd.step(&mut net, &g, 0.1, 0.1);
        sgd.step(&mut net, &g, 0.1, 0.1);
        // v1 = 1, v2 = 1.5; w = 1 - 0.1 - 0.15
        let Layer::Dense(d) = &net.head[0] else { unreachable!() };
        assert!((d.weight.data()[0] - 0.75).abs() < 1e-15);
    }
}
