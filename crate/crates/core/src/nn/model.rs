//! The interface shared by every trainable network in the crate.

use super::layer::{Dense, DenseGrad};
use super::loss::joint_bce;
use super::matrix::Matrix;

/// A network mapping feature rows to one sigmoid probability per task.
///
/// `layers` and `layers_mut` must list parameters in the same, fixed order;
/// gradients returned by `loss_and_grads` follow that order. Optimizers,
/// checkpoints and the gradient checker rely on it.
pub trait Model: Clone {
    fn input_dim(&self) -> usize;

    fn tasks(&self) -> usize;

    fn layers(&self) -> Vec<&Dense>;

    fn layers_mut(&mut self) -> Vec<&mut Dense>;

    /// Probabilities, `rows x tasks`.
    fn predict(&self, x: &Matrix) -> Matrix;

    /// Joint BCE (see [`joint_bce`]) and its parameter gradients.
    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> (f64, Vec<DenseGrad>);

    fn loss(&self, x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> f64 {
        joint_bce(&self.predict(x), y, mask)
    }

    /// Identifies the piecewise-smooth region the network is in for `x`.
    /// Finite differences are only meaningful while this stays fixed.
    fn kink_signature(&self, _x: &Matrix) -> Vec<u8> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }
}
