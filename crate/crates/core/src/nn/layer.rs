//! Dense layers and their activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
    /// Softmax followed by zeroing every entry below the threshold.
    SparseSoftmax(f64),
}

impl Activation {
    pub(crate) fn tag(&self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
            Activation::SparseSoftmax(_) => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8, tau: f64) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            4 => Activation::SparseSoftmax(tau),
            _ => return None,
        })
    }

    pub(crate) fn tau(&self) -> f64 {
        match self {
            Activation::SparseSoftmax(t) => *t,
            _ => 0.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_inplace(&mut out);
    out
}

fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Softmax, then entries strictly below `tau` are set to zero. The
/// survivors are not renormalized.
pub fn sparse_softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let mut out = softmax(logits);
    for x in out.iter_mut() {
        if *x < tau {
            *x = 0.0;
        }
    }
    out
}

/// Glorot/Xavier uniform matrix (`fan_in x fan_out`) on `[-L, L]`,
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, seed: u64) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed::rng(seed);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Values saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Post-activation output.
    pub out: Matrix,
    /// Pre-activation for ReLU; plain (unmasked) softmax for the softmax
    /// kinds; empty otherwise.
    aux: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Matrix::zeros(layer.input_dim(), layer.output_dim()),
            bias: vec![0.0; layer.output_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrad) {
        self.weights.axpy(1.0, &other.weights);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation, seed: u64) -> Self {
        Self {
            weights: glorot_init(fan_in, fan_out, seed),
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    /// Affine part only.
    pub fn preactivation(&self, input: &Matrix) -> Matrix {
        let mut z = input.matmul(&self.weights);
        z.add_row_vector(&self.bias);
        z
    }

    pub fn forward(&self, input: &Matrix) -> LayerCache {
        let mut z = self.preactivation(input);
        match self.activation {
            Activation::Identity => LayerCache { out: z, aux: None },
            Activation::Relu => {
                let mut out = z.clone();
                out.map_inplace(|v| v.max(0.0));
                LayerCache { out, aux: Some(z) }
            }
            Activation::Sigmoid => {
                z.map_inplace(sigmoid);
                LayerCache { out: z, aux: None }
            }
            Activation::Softmax => {
                for r in 0..z.rows() {
                    softmax_inplace(z.row_mut(r));
                }
                LayerCache { out: z.clone(), aux: Some(z) }
            }
            Activation::SparseSoftmax(tau) => {
                for r in 0..z.rows() {
                    softmax_inplace(z.row_mut(r));
                }
                let mut out = z.clone();
                out.map_inplace(|v| if v < tau { 0.0 } else { v });
                LayerCache { out, aux: Some(z) }
            }
        }
    }

    pub fn infer(&self, input: &Matrix) -> Matrix {
        self.forward(input).out
    }

    /// Maps the gradient w.r.t. this layer's output to the gradient w.r.t.
    /// its pre-activation.
    pub fn activation_backward(&self, cache: &LayerCache, d_out: &Matrix) -> Matrix {
        let mut dz = d_out.clone();
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => {
                let z = cache.aux.as_ref().expect("relu cache");
                dz.data_mut()
                    .iter_mut()
                    .zip(z.data())
                    .for_each(|(g, &z)| if z <= 0.0 { *g = 0.0 });
            }
            Activation::Sigmoid => {
                dz.data_mut()
                    .iter_mut()
                    .zip(cache.out.data())
                    .for_each(|(g, &a)| *g *= a * (1.0 - a));
            }
            Activation::Softmax | Activation::SparseSoftmax(_) => {
                // out = mask * p, with the mask held constant:
                // dz_j = p_j (mask_j g_j - sum_i mask_i g_i p_i)
                let p = cache.aux.as_ref().expect("softmax cache");
                let masked = matches!(self.activation, Activation::SparseSoftmax(_));
                for r in 0..dz.rows() {
                    let pr = p.row(r);
                    let outr = cache.out.row(r);
                    let g = dz.row_mut(r);
                    if masked {
                        for (gj, &o) in g.iter_mut().zip(outr) {
                            if o == 0.0 {
                                *gj = 0.0;
                            }
                        }
                    }
                    let dot: f64 = g.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (gj, &pj) in g.iter_mut().zip(pr) {
                        *gj = pj * (*gj - dot);
                    }
                }
            }
        }
        dz
    }

    /// Parameter gradients (and optionally the input gradient) from the
    /// gradient w.r.t. the pre-activation.
    pub fn backward_preact(
        &self,
        input: &Matrix,
        dz: &Matrix,
        need_input_grad: bool,
    ) -> (DenseGrad, Option<Matrix>) {
        let grad = DenseGrad { weights: input.t_matmul(dz), bias: dz.column_sums() };
        let dx = need_input_grad.then(|| dz.matmul_t(&self.weights));
        (grad, dx)
    }

    pub fn backward(
        &self,
        input: &Matrix,
        cache: &LayerCache,
        d_out: &Matrix,
        need_input_grad: bool,
    ) -> (DenseGrad, Option<Matrix>) {
        let dz = self.activation_backward(cache, d_out);
        self.backward_preact(input, &dz, need_input_grad)
    }

    /// Flattened parameter views: weights then bias.
    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weights.data_mut(), &mut self.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    /// Bit pattern of which units sit on the non-smooth side of their
    /// activation (ReLU active set, sparse-softmax survivors).
    pub fn kink_signature(&self, cache: &LayerCache, out: &mut Vec<u8>) {
        match self.activation {
            Activation::Relu => out.extend(cache.out.data().iter().map(|&v| u8::from(v > 0.0))),
            Activation::SparseSoftmax(_) => {
                out.extend(cache.out.data().iter().map(|&v| u8::from(v > 0.0)))
            }
            _ => {}
        }
    }
}
