//! Simulate-then-attack harness used by the command line and by the
//! end-to-end tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_lr_product, train_mursi, LrProductModel, SharedBottom};
use crate::dataset::{generate_crps, CrpSet};
use crate::error::{invalid, Error, Result};
use crate::mixture::MixtureNetwork;
use crate::mope::{evaluate, train_mope, MopeConfig};
use crate::nn::checkpoint::ModelBlob;
use crate::nn::Model;
use crate::puf::{PufKind, PufSpec};
use crate::report::AttackReport;
use crate::seed;
use crate::training;

/// Held-out CRPs per evaluation.
pub const TEST_CRPS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    Mope,
    /// Logistic product model with `k` factors.
    Lr { k: usize },
    /// MLP sized for a `k`-XOR target.
    Mursi { k: usize },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Mope => "mope",
            AttackKind::Lr { .. } => "lr",
            AttackKind::Mursi { .. } => "mursi",
        }
    }

    /// Builds the attack from a name and the optional structure hint.
    pub fn from_parts(name: &str, k: Option<usize>) -> Result<Self> {
        match (name, k) {
            ("mope", None) => Ok(AttackKind::Mope),
            ("mope", Some(_)) => invalid("mope requires no structure knowledge"),
            ("lr", Some(k)) => Ok(AttackKind::Lr { k }),
            ("mursi", Some(k)) => Ok(AttackKind::Mursi { k }),
            ("lr" | "mursi", None) => invalid(format!("{name} needs the XOR size k")),
            _ => invalid(format!("unknown attack '{name}'")),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackKind::Mope => f.write_str("mope"),
            AttackKind::Lr { k } => write!(f, "lr:{k}"),
            AttackKind::Mursi { k } => write!(f, "mursi:{k}"),
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => Self::from_parts(s, None),
            Some((name, k)) => {
                let k = k.parse().map_err(|_| Error::InvalidArgument(format!("bad k in '{s}'")))?;
                Self::from_parts(name, Some(k))
            }
        }
    }
}

/// Draws `train` training CRPs and `test` held-out CRPs whose challenges do
/// not occur in the training part.
pub fn simulate(spec: &PufSpec, challenge_seed: u64, train: usize, test: usize) -> Result<(CrpSet, CrpSet)> {
    simulate_many(std::slice::from_ref(spec), challenge_seed, train, test)
}

/// Multi-column version of [`simulate`]; all specs see the same challenges.
pub fn simulate_many(specs: &[PufSpec], challenge_seed: u64, train: usize, test: usize) -> Result<(CrpSet, CrpSet)> {
    let slack = (test / 10).max(100);
    let set = generate_crps(specs, challenge_seed, train + test + slack)?;
    set.disjoint_holdout(train, test)
}

/// Any model produced by [`run_attack`].
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Mixture(MixtureNetwork),
    Lr(LrProductModel),
    Mlp(SharedBottom),
}

impl TrainedModel {
    pub fn to_blob(&self) -> ModelBlob {
        match self {
            TrainedModel::Mixture(m) => m.to_blob(),
            TrainedModel::Lr(m) => m.to_blob(),
            TrainedModel::Mlp(m) => m.to_blob(),
        }
    }
}

/// Trains `attack` on `train` and scores it on `test`.
///
/// The mope path receives only the challenge/response payload.
pub fn run_attack(
    attack: AttackKind,
    train: &CrpSet,
    test: &CrpSet,
    cfg: &MopeConfig,
) -> Result<(TrainedModel, AttackReport)> {
    if train.n() != test.n() || train.tasks() != test.tasks() {
        return invalid("training and test sets differ in shape");
    }
    Ok(match attack {
        AttackKind::Mope => {
            let (net, r) = train_mope(&train.payload_only(), cfg)?;
            let acc = evaluate(&net, &test.payload_only());
            (TrainedModel::Mixture(net), r.with_test(acc, test.len()))
        }
        AttackKind::Lr { k } => {
            let (m, r) = train_lr_product(train, k, &cfg.train)?;
            let acc = held_out(&m, test);
            (TrainedModel::Lr(m), r.with_test(acc, test.len()))
        }
        AttackKind::Mursi { k } => {
            let (m, r) = train_mursi(train, k, &cfg.train)?;
            let acc = held_out(&m, test);
            (TrainedModel::Mlp(m), r.with_test(acc, test.len()))
        }
    })
}

fn held_out<M: Model>(m: &M, test: &CrpSet) -> f64 {
    training::accuracy(m, test)[0]
}

/// Fresh PUF instance and challenges for run `index` of an experiment.
pub fn run_seeds(base: u64, index: u64) -> (u64, u64) {
    (seed::derive(base, seed::STREAM_SPEC, index), seed::derive(base, seed::STREAM_CHALLENGE, index))
}

/// Simulates a fresh instance of `kind` and attacks it.
pub fn simulate_and_attack(
    kind: &PufKind,
    n: usize,
    train: usize,
    attack: AttackKind,
    cfg: &MopeConfig,
    base_seed: u64,
    index: u64,
) -> Result<AttackReport> {
    let (puf_seed, challenge_seed) = run_seeds(base_seed, index);
    let spec = PufSpec::new(*kind, n, puf_seed)?;
    let (tr, te) = simulate(&spec, challenge_seed, train, TEST_CRPS)?;
    let mut cfg = cfg.clone();
    cfg.train.seed = seed::derive(base_seed, seed::STREAM_INIT, index);
    Ok(run_attack(attack, &tr, &te, &cfg)?.1.tag("target", kind.to_string()).tag("n", n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_names() {
        assert_eq!("mope".parse::<AttackKind>().unwrap(), AttackKind::Mope);
        assert_eq!("lr:2".parse::<AttackKind>().unwrap(), AttackKind::Lr { k: 2 });
        assert_eq!(AttackKind::Mursi { k: 5 }.to_string(), "mursi:5");
        let e = AttackKind::from_parts("mope", Some(2)).unwrap_err();
        assert!(e.to_string().contains("mope requires no structure knowledge"));
        assert!(AttackKind::from_parts("mursi", None).is_err());
        assert!("svm".parse::<AttackKind>().is_err());
    }
}
