//! Multi-gate extension: several response columns over shared challenges,
//! shared experts, one gate, tower and head per column.

use serde::{Deserialize, Serialize};

use crate::dataset::CrpSet;
use crate::error::{invalid, Result};
use crate::mixture::MixtureNetwork;
use crate::mope::{gate_sample_means, MopeConfig};
use crate::report::AttackReport;
use crate::training::{self, LabelLimits, TrainConfig};

pub type MmopeNetwork = MixtureNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmopeConfig {
    pub tasks: usize,
    pub base_experts: usize,
    /// Experts added for every task beyond the first.
    pub extra_experts: usize,
    pub expert_hidden: [usize; 2],
    pub tower_hidden: usize,
    pub tau: f64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl MmopeConfig {
    /// Defaults for `tasks` columns: 4 base experts plus 3 per extra task.
    pub fn new(tasks: usize) -> Self {
        Self::from_mope(tasks, &MopeConfig::default())
    }

    /// Reuses the layer sizes and training schedule of a single-task config.
    pub fn from_mope(tasks: usize, m: &MopeConfig) -> Self {
        Self {
            tasks,
            base_experts: m.num_experts,
            extra_experts: 3,
            expert_hidden: m.expert_hidden,
            tower_hidden: m.tower_hidden,
            tau: m.tau,
            train: m.train.clone(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// `base + extra * (T - 1)`.
    pub fn expert_count(&self) -> usize {
        self.base_experts + self.extra_experts * self.tasks.saturating_sub(1)
    }

    fn as_mope(&self) -> MopeConfig {
        MopeConfig {
            num_experts: self.expert_count(),
            expert_hidden: self.expert_hidden,
            tower_hidden: self.tower_hidden,
            tau: self.tau,
            train: self.train.clone(),
        }
    }
}

pub fn build_mmope(n: usize, cfg: &MmopeConfig) -> Result<MmopeNetwork> {
    if cfg.tasks == 0 {
        return invalid("task count must be positive");
    }
    if cfg.expert_count() < cfg.tasks {
        return invalid(format!("{} experts for {} tasks", cfg.expert_count(), cfg.tasks));
    }
    let m = cfg.as_mope();
    MixtureNetwork::new(m.architecture(n, m.num_experts, cfg.tasks), cfg.train.seed)
}

/// Trains on all columns jointly. Returns one report per task followed by
/// a combined report (`task: None`).
pub fn train_mmope(set: &CrpSet, cfg: &MmopeConfig) -> Result<(MmopeNetwork, Vec<AttackReport>)> {
    train_mmope_limited(set, cfg, None)
}

/// As [`train_mmope`], with task `t` labelled only on rows `0..limits[t]`.
pub fn train_mmope_limited(
    set: &CrpSet,
    cfg: &MmopeConfig,
    limits: Option<&LabelLimits>,
) -> Result<(MmopeNetwork, Vec<AttackReport>)> {
    if set.tasks() < 2 {
        return invalid(format!("multi-task training needs at least 2 response columns, found {}", set.tasks()));
    }
    if cfg.tasks != set.tasks() {
        return invalid(format!("config declares {} tasks, data has {}", cfg.tasks, set.tasks()));
    }
    let mut net = build_mmope(set.n(), cfg)?;
    let outcome = training::fit(&mut net, set, &cfg.train, limits)?;
    let gates = gate_sample_means(&net, set);
    let config = serde_json::to_value(cfg).expect("config serializes");
    let rows_for = |t: usize| limits.map_or(set.len(), |l| l.0[t].min(set.len()));
    let base = AttackReport {
        attack: "mmope".into(),
        task: None,
        config,
        train_crps: set.len(),
        test_crps: 0,
        accuracy: None,
        epochs: outcome.epochs,
        wall_time_secs: outcome.wall_time.as_secs_f64(),
        gate_means: Vec::new(),
        seed: cfg.train.seed,
        tags: Default::default(),
    };
    let mut reports: Vec<AttackReport> = gates
        .into_iter()
        .enumerate()
        .map(|(t, g)| AttackReport { task: Some(t), train_crps: rows_for(t), gate_means: g, ..base.clone() })
        .collect();
    reports.push(base);
    Ok((net, reports))
}

/// Held-out accuracy per task.
pub fn evaluate_tasks(net: &MmopeNetwork, test: &CrpSet) -> Vec<f64> {
    training::accuracy(net, test)
}

/// Fills per-task accuracies into reports from [`train_mmope`]; the
/// combined record receives the mean.
pub fn attach_accuracies(reports: Vec<AttackReport>, accuracies: &[f64], test_crps: usize) -> Vec<AttackReport> {
    let mean = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
    reports
        .into_iter()
        .map(|r| {
            let acc = r.task.map_or(mean, |t| accuracies[t]);
            r.with_test(acc, test_crps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Model;

    #[test]
    fn expert_count_grows_with_tasks() {
        let cfg = MmopeConfig::new(2);
        assert_eq!(cfg.expert_count(), 7);
        let net = build_mmope(64, &cfg).unwrap();
        assert_eq!(net.experts.len(), 7);
        assert_eq!(net.heads.len(), 2);
        assert_eq!(MmopeConfig::new(5).expert_count(), 16);
    }

    #[test]
    fn single_task_matches_single_target_network() {
        let m = MopeConfig::default().with_seed(9);
        let multi = build_mmope(32, &MmopeConfig::from_mope(1, &m)).unwrap();
        let single = crate::mope::build_mope(32, &m).unwrap();
        assert_eq!(multi, single);
        assert_eq!(multi.tasks(), 1);
    }
}
