//! Training schedule shared by every attack network.
//!
//! Minibatch Adam with batch size `min(N_train, 20000)`, learning rate
//! halved after `plateau_patience` epochs without validation improvement,
//! early stop after `early_stop_patience` such epochs, and the parameters
//! with the best validation loss restored at the end.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::CrpSet;
use crate::error::{invalid, Error, Result};
use crate::nn::{joint_bce, AdamState, Matrix, Model};
use crate::seed;

/// Default upper bound on the minibatch size.
pub const BATCH_CAP: usize = 20_000;

/// Rows per chunk when evaluating large sets.
const EVAL_CHUNK: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Initial Adam step size. Full-batch training takes one step per epoch
    /// below 20k rows, so the small Adam default barely moves in 300 epochs.
    pub learning_rate: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
    /// Upper bound on the minibatch size.
    pub batch_cap: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            learning_rate: 0.02,
            plateau_patience: 10,
            lr_decay: 0.5,
            early_stop_patience: 25,
            validation_fraction: 0.05,
            min_delta: 0.0,
            batch_cap: BATCH_CAP,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return invalid(format!(
                "validation fraction {} must lie in (0, 0.5)",
                self.validation_fraction
            ));
        }
        if self.batch_cap == 0 {
            return invalid("batch cap must be positive");
        }
        if self.max_epochs == 0 || !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("max_epochs, learning_rate and lr_decay must be positive (lr_decay <= 1)");
        }
        Ok(())
    }
}

/// `min(n, 20000)`, at least 1.
pub fn batch_size(n_train: usize) -> usize {
    capped_batch(n_train, BATCH_CAP)
}

pub fn capped_batch(n_train: usize, cap: usize) -> usize {
    n_train.min(cap).max(1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean over tasks of the thresholded validation accuracy.
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_rows: usize,
    pub val_rows: usize,
    pub batch_size: usize,
    pub history: Vec<EpochRecord>,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        d.as_secs_f64().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Label availability for multi-task sets where task `t` is only labelled
/// on rows `0..limits[t]`.
#[derive(Clone, Debug)]
pub struct LabelLimits(pub Vec<usize>);

impl LabelLimits {
    fn mask(&self, rows: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), self.0.len());
        for (r, &src) in rows.iter().enumerate() {
            for (t, &lim) in self.0.iter().enumerate() {
                if src < lim {
                    m.set(r, t, 1.0);
                }
            }
        }
        m
    }
}

/// Trains `model` in place on `data`.
pub fn fit<M: Model>(
    model: &mut M,
    data: &CrpSet,
    cfg: &TrainConfig,
    limits: Option<&LabelLimits>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    if model.input_dim() != data.n() || model.tasks() != data.tasks() {
        return invalid(format!(
            "model expects {} inputs / {} tasks, data has {} / {}",
            model.input_dim(),
            model.tasks(),
            data.n(),
            data.tasks()
        ));
    }
    if let Some(l) = limits {
        if l.0.len() != data.tasks() {
            return invalid("label limits must list one count per task");
        }
    }
    let start = Instant::now();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, seed::STREAM_SPLIT, 1)));
    let val_rows = if data.len() >= 2 {
        ((cfg.validation_fraction * data.len() as f64).round() as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(val_rows);
    let mut train_idx = train_idx.to_vec();
    let val_x = data.features(val_idx);
    let val_y = data.labels(val_idx);
    let val_mask = limits.map(|l| l.mask(val_idx));

    let batch = capped_batch(train_idx.len(), cfg.batch_cap);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut shuffle_rng = seed::rng(seed::derive(cfg.seed, seed::STREAM_SHUFFLE, 0));

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in train_idx.chunks(batch) {
            let x = data.features(chunk);
            let y = data.labels(chunk);
            let mask = limits.map(|l| l.mask(chunk));
            let (loss, grads) = model.loss_and_grads(&x, &y, mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!("loss {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut model.layers_mut(), &grads)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let (val_loss, val_accuracy) = if val_rows > 0 {
            let p = predict_matrix(model, &val_x);
            (joint_bce(&p, &val_y, val_mask.as_ref()), masked_accuracy(&p, &val_y, val_mask.as_ref()))
        } else {
            (train_loss, f64::NAN)
        };
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("validation loss {val_loss} in epoch {epoch}")));
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, val_accuracy, learning_rate: adam.learning_rate });

        if val_loss < best_loss - cfg.min_delta {
            best_loss = val_loss;
            best_epoch = epoch;
            best.clone_from(model);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_decay >= cfg.plateau_patience {
                adam.learning_rate *= cfg.lr_decay;
                since_decay = 0;
            }
        }
    }
    *model = best;
    Ok(TrainOutcome {
        epochs: history.len(),
        best_epoch,
        best_val_loss: best_loss,
        train_rows: train_idx.len(),
        val_rows,
        batch_size: batch,
        history,
        wall_time: start.elapsed(),
    })
}

fn masked_accuracy(probs: &Matrix, labels: &Matrix, mask: Option<&Matrix>) -> f64 {
    let mut per_task = Vec::new();
    for t in 0..probs.cols() {
        let (mut hit, mut count) = (0usize, 0usize);
        for r in 0..probs.rows() {
            if mask.is_none_or(|m| m.get(r, t) != 0.0) {
                count += 1;
                hit += usize::from(f64::from(decide(probs.get(r, t))) == labels.get(r, t));
            }
        }
        if count > 0 {
            per_task.push(hit as f64 / count as f64);
        }
    }
    per_task.iter().sum::<f64>() / per_task.len().max(1) as f64
}

/// Chunked prediction over a feature matrix.
pub fn predict_matrix<M: Model>(model: &M, x: &Matrix) -> Matrix {
    if x.rows() <= EVAL_CHUNK {
        return model.predict(x);
    }
    let mut out = Matrix::zeros(x.rows(), model.tasks());
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let p = model.predict(&x.select_rows(chunk));
        for (i, &r) in chunk.iter().enumerate() {
            out.row_mut(r).copy_from_slice(p.row(i));
        }
    }
    out
}

/// Probabilities for every row of `set`, `rows x tasks`.
pub fn predict_set<M: Model>(model: &M, set: &CrpSet) -> Matrix {
    let mut out = Matrix::zeros(set.len(), model.tasks());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let p = model.predict(&set.features(chunk));
        for (i, &r) in chunk.iter().enumerate() {
            out.row_mut(r).copy_from_slice(p.row(i));
        }
    }
    out
}

/// Predicted bit: 1 iff `p > 0.5`.
#[inline]
pub fn decide(p: f64) -> u8 {
    u8::from(p > 0.5)
}

/// Per-task fraction of rows where the thresholded prediction equals the
/// label.
pub fn accuracy<M: Model>(model: &M, set: &CrpSet) -> Vec<f64> {
    let probs = predict_set(model, set);
    accuracy_from_probs(&probs, set)
}

pub fn accuracy_from_probs(probs: &Matrix, set: &CrpSet) -> Vec<f64> {
    let tasks = probs.cols();
    let mut hits = vec![0usize; tasks];
    for i in 0..set.len() {
        for (t, h) in hits.iter_mut().enumerate() {
            if decide(probs.get(i, t)) == set.response(i, t) {
                *h += 1;
            }
        }
    }
    hits.iter().map(|&h| h as f64 / set.len().max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_rule_boundaries() {
        assert_eq!(batch_size(1), 1);
        assert_eq!(batch_size(19_999), 19_999);
        assert_eq!(batch_size(20_000), 20_000);
        assert_eq!(batch_size(20_001), 20_000);
        assert_eq!(batch_size(2_400_000), 20_000);
    }

    #[test]
    fn tie_predicts_zero() {
        assert_eq!(decide(0.5), 0);
        assert_eq!(decide(0.5000001), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.validation_fraction = 0.5;
        assert!(c.validate().is_err());
        c.validation_fraction = 0.0;
        assert!(c.validate().is_err());
    }
}
