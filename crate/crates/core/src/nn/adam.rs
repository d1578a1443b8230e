//! Adam with bias correction.

use super::layer::{Dense, DenseGrad};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<DenseGrad>,
    second: Vec<DenseGrad>,
    step: u64,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `layers` in place. Moment buffers are created
    /// on the first call and must keep the same layer order afterwards.
    pub fn step(&mut self, layers: &mut [&mut Dense], grads: &[DenseGrad]) -> Result<()> {
        if layers.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layers but {} gradients",
                layers.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite gradient in layer {i} at step {}",
                self.step + 1
            )));
        }
        if self.first.is_empty() {
            self.first = layers.iter().map(|l| DenseGrad::zeros_like(l)).collect();
            self.second = self.first.clone();
        }
        for ((layer, grad), m) in layers.iter().zip(grads).zip(&self.first) {
            if layer.weights.shape() != grad.weights.shape()
                || layer.weights.shape() != m.weights.shape()
            {
                return Err(Error::InvalidArgument("gradient shape mismatch".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (i, layer) in layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            update(layer.weights.data_mut(), grads[i].weights.data(), m.weights.data_mut(), v.weights.data_mut());
            update(&mut layer.bias, &grads[i].bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }
}
