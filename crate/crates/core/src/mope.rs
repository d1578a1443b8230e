//! Single-target mixture-of-experts attack.

use serde::{Deserialize, Serialize};

use crate::dataset::CrpSet;
use crate::error::{invalid, Result};
use crate::mixture::{Architecture, MixtureNetwork};
use crate::report::AttackReport;
use crate::training::{self, TrainConfig};

pub use crate::mixture::combine_experts;

pub type MopeNetwork = MixtureNetwork;

/// Rows used to estimate the reported mean gate weights.
const GATE_SAMPLE: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MopeConfig {
    pub num_experts: usize,
    pub expert_hidden: [usize; 2],
    pub tower_hidden: usize,
    pub tau: f64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for MopeConfig {
    fn default() -> Self {
        Self { num_experts: 4, expert_hidden: [32, 32], tower_hidden: 16, tau: 1e-4, train: TrainConfig::default() }
    }
}

impl MopeConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub(crate) fn architecture(&self, n: usize, experts: usize, tasks: usize) -> Architecture {
        Architecture {
            n,
            experts,
            tasks,
            expert_hidden: self.expert_hidden,
            tower_hidden: self.tower_hidden,
            tau: self.tau,
        }
    }
}

pub fn build_mope(n: usize, cfg: &MopeConfig) -> Result<MopeNetwork> {
    MixtureNetwork::new(cfg.architecture(n, cfg.num_experts, 1), cfg.train.seed)
}

pub fn train_mope(set: &CrpSet, cfg: &MopeConfig) -> Result<(MopeNetwork, AttackReport)> {
    if set.tasks() != 1 {
        return invalid(format!("expected one response column, found {}", set.tasks()));
    }
    cfg.train.validate()?;
    let mut net = build_mope(set.n(), cfg)?;
    let outcome = training::fit(&mut net, set, &cfg.train, None)?;
    let gate_means = gate_sample_means(&net, set).swap_remove(0);
    let report = AttackReport {
        attack: "mope".into(),
        task: None,
        config: serde_json::to_value(cfg).expect("config serializes"),
        train_crps: set.len(),
        test_crps: 0,
        accuracy: None,
        epochs: outcome.epochs,
        wall_time_secs: outcome.wall_time.as_secs_f64(),
        gate_means,
        seed: cfg.train.seed,
        tags: Default::default(),
    };
    Ok((net, report))
}

pub(crate) fn gate_sample_means(net: &MixtureNetwork, set: &CrpSet) -> Vec<Vec<f64>> {
    let rows: Vec<usize> = (0..set.len().min(GATE_SAMPLE)).collect();
    net.gate_means(&set.features(&rows))
}

/// Predicted bits (`p > 0.5`) and probabilities for every challenge of
/// `set`, first task.
pub fn predict(net: &MopeNetwork, set: &CrpSet) -> (Vec<u8>, Vec<f64>) {
    let probs = training::predict_set(net, set).column(0);
    (probs.iter().map(|&p| training::decide(p)).collect(), probs)
}

/// Held-out accuracy of the first task.
pub fn evaluate(net: &MopeNetwork, test: &CrpSet) -> f64 {
    training::accuracy(net, test)[0]
}
