//! Minimal neural-network substrate: dense layers, softmax variants, binary
//! cross-entropy, Adam, explicit backpropagation and a finite-difference
//! gradient checker. Everything runs in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod model;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{glorot_init, sigmoid, softmax, sparse_softmax, Activation, Dense, DenseGrad, LayerCache};
pub use loss::{bce_loss, joint_bce, joint_bce_logit_grad};
pub use matrix::Matrix;
pub use model::Model;
