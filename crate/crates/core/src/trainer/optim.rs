use crate::network::Network;
use crate::scalar::Scalar;

use super::config::{OptimizerConfig, OptimizerKind};

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD with momentum, or Adam; both with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, net: &Network<T>) -> Self {
        let zeros: Vec<Vec<T>> = net.named_params().iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Self { config, second: zeros.clone(), first: zeros, steps: 0 }
    }

    /// Applies one update from the `grad` buffers on `net`'s parameters.
    pub fn step(&mut self, net: &mut Network<T>, lr: f64) {
        self.steps += 1;
        let lr = T::lit(lr);
        let mu = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        let (b2, eps) = (T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
        let bias1 = T::one() - mu.powi(self.steps);
        let bias2 = T::one() - b2.powi(self.steps);
        for ((p, m), v) in net.params_mut().into_iter().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
            let w = p.data_mut();
            match self.config.kind {
                OptimizerKind::Sgd => {
                    for ((wi, mi), gi) in w.iter_mut().zip(m.iter_mut()).zip(&g) {
                        *mi = mu * *mi + *gi + wd * *wi;
                        *wi -= lr * *mi;
                    }
                }
                OptimizerKind::Adam => {
                    for (((wi, mi), vi), gi) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g) {
                        let gi = *gi + wd * *wi;
                        *mi = mu * *mi + (T::one() - mu) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        *wi -= lr * (*mi / bias1) / ((*vi / bias2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
