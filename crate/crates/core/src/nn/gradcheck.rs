//! Central finite-difference check of analytic gradients.

use serde::Serialize;

use super::matrix::Matrix;
use super::model::Model;

#[derive(Clone, Debug, Serialize)]
pub struct BlockError {
    pub layer: usize,
    /// `"weights"` or `"bias"`.
    pub block: &'static str,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockError>,
    pub checked: usize,
    /// Parameters whose perturbation moved the network across a kink
    /// (ReLU or sparse-softmax mask change); their difference quotient is
    /// not a derivative estimate.
    pub skipped: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `loss_and_grads` against `(L(p + h) - L(p - h)) / 2h` for every
/// parameter of `model`.
pub fn grad_check<M: Model>(
    model: &M,
    x: &Matrix,
    y: &Matrix,
    mask: Option<&Matrix>,
    h: f64,
    floor: f64,
) -> GradCheckReport {
    let (_, grads) = model.loss_and_grads(x, y, mask);
    let base_sig = model.kink_signature(x);
    let mut probe = model.clone();
    let mut blocks = Vec::new();
    let mut checked = 0;
    let mut skipped = 0;
    let layer_count = grads.len();
    for li in 0..layer_count {
        for (bi, name) in ["weights", "bias"].into_iter().enumerate() {
            let analytic: &[f64] = if bi == 0 { grads[li].weights.data() } else { &grads[li].bias };
            let mut worst: f64 = 0.0;
            for pi in 0..analytic.len() {
                let orig = param(&mut probe, li, bi, pi, None);
                param(&mut probe, li, bi, pi, Some(orig + h));
                let plus = probe.loss(x, y, mask);
                let sig_plus = probe.kink_signature(x);
                param(&mut probe, li, bi, pi, Some(orig - h));
                let minus = probe.loss(x, y, mask);
                let sig_minus = probe.kink_signature(x);
                param(&mut probe, li, bi, pi, Some(orig));
                if sig_plus != base_sig || sig_minus != base_sig {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max(relative_error(analytic[pi], numeric, floor));
                checked += 1;
            }
            blocks.push(BlockError { layer: li, block: name, max_rel_error: worst });
        }
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    GradCheckReport { max_rel_error, blocks, checked, skipped }
}

/// Reads a parameter, or writes it when `value` is given; returns the old
/// value.
fn param<M: Model>(m: &mut M, layer: usize, block: usize, idx: usize, value: Option<f64>) -> f64 {
    let mut layers = m.layers_mut();
    let l = &mut layers[layer];
    let slot = if block == 0 { &mut l.weights.data_mut()[idx] } else { &mut l.bias[idx] };
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}
