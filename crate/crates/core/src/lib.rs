//! Delay-based PUF simulation and generic machine-learning modelling attacks.
//!
//! The crate simulates arbiter-based strong PUFs (plain, k-XOR,
//! feed-forward and interpose compositions) under the additive delay model
//! and attacks them with a mixture-of-experts network that needs no
//! knowledge of the target's structure, plus its multi-task extension and
//! structure-aware baselines for comparison.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mixture;
pub mod mmope;
pub mod mope;
pub mod nn;
pub mod puf;
pub mod report;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
