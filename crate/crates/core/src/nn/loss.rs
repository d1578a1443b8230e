//! Binary cross-entropy.

use super::matrix::Matrix;

/// Probability clamp used before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of `predictions` against 0/1 `labels`.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "bce length mismatch");
    if predictions.is_empty() {
        return 0.0;
    }
    let sum: f64 = predictions.iter().zip(labels).map(|(&p, &y)| bce_term(p, y)).sum();
    sum / predictions.len() as f64
}

/// Rows labelled per task (all rows when there is no mask).
fn task_counts(probs: &Matrix, mask: Option<&Matrix>) -> Vec<f64> {
    match mask {
        None => vec![probs.rows() as f64; probs.cols()],
        Some(m) => m.column_sums(),
    }
}

/// Unweighted mean over tasks of each task's mean BCE. `mask` (same shape,
/// 0/1) marks which labels exist; tasks with no labelled rows are skipped.
pub fn joint_bce(probs: &Matrix, labels: &Matrix, mask: Option<&Matrix>) -> f64 {
    assert_eq!(probs.shape(), labels.shape());
    let counts = task_counts(probs, mask);
    let active = counts.iter().filter(|&&c| c > 0.0).count();
    if active == 0 {
        return 0.0;
    }
    let tasks = probs.cols();
    let mut sums = vec![0.0; tasks];
    for r in 0..probs.rows() {
        for t in 0..tasks {
            let w = mask.map_or(1.0, |m| m.get(r, t));
            if w != 0.0 {
                sums[t] += w * bce_term(probs.get(r, t), labels.get(r, t));
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0.0)
        .map(|(s, c)| s / c)
        .sum::<f64>()
        / active as f64
}

/// Gradient of [`joint_bce`] w.r.t. the sigmoid logits, `(p - y)` scaled by
/// each task's weight in the joint mean.
pub fn joint_bce_logit_grad(probs: &Matrix, labels: &Matrix, mask: Option<&Matrix>) -> Matrix {
    let counts = task_counts(probs, mask);
    let active = counts.iter().filter(|&&c| c > 0.0).count().max(1) as f64;
    let tasks = probs.cols();
    let mut g = Matrix::zeros(probs.rows(), tasks);
    for r in 0..probs.rows() {
        for t in 0..tasks {
            let w = mask.map_or(1.0, |m| m.get(r, t));
            if w != 0.0 && counts[t] > 0.0 {
                g.set(r, t, w * (probs.get(r, t) - labels.get(r, t)) / (counts[t] * active));
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let l = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]);
        assert!(l <= -(1.0 - PROB_CLAMP).ln() + 1e-15);
        assert!(l > 0.0);
    }

    #[test]
    fn uniform_predictor_is_ln2() {
        let l = bce_loss(&[0.5; 10], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!((l - std::f64::consts::LN_2).abs() <= 1e-12);
    }

    #[test]
    fn hand_evaluated_pair() {
        let l = bce_loss(&[0.9, 0.1], &[1.0, 0.0]);
        let expected = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.10536).abs() < 1e-5);
    }

    #[test]
    fn joint_loss_weights_tasks_equally() {
        // task 0 has two labelled rows, task 1 only one
        let p = Matrix::from_rows(&[vec![0.9, 0.2], vec![0.6, 0.5]]);
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]);
        let t0 = bce_loss(&[0.9, 0.6], &[1.0, 1.0]);
        let t1 = bce_loss(&[0.2], &[0.0]);
        assert!((joint_bce(&p, &y, Some(&m)) - (t0 + t1) / 2.0).abs() < 1e-15);
        let g = joint_bce_logit_grad(&p, &y, Some(&m));
        assert!((g.get(0, 0) - (0.9 - 1.0) / 4.0).abs() < 1e-15);
        assert!((g.get(0, 1) - 0.2 / 2.0).abs() < 1e-15);
        assert_eq!(g.get(1, 1), 0.0);
    }
}
