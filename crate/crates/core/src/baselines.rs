//! Structure-aware reference attacks: the logistic product model and a
//! fixed-shape MLP whose widths depend on the XOR size `k`, plus its
//! shared-bottom multi-task form.

use serde::Serialize;

use crate::dataset::CrpSet;
use crate::error::{invalid, Result};
use crate::nn::checkpoint::ModelBlob;
use crate::nn::{joint_bce, joint_bce_logit_grad, sigmoid, Activation, Dense, DenseGrad, LayerCache, Matrix, Model};
use crate::report::AttackReport;
use crate::seed;
use crate::training::{self, LabelLimits, TrainConfig};

pub(crate) const LR_BLOB_KIND: u8 = 2;
pub(crate) const MLP_BLOB_KIND: u8 = 3;

/// `p = sigmoid(prod_l (<w_l, x> + b_l))` with `k` factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LrProductModel {
    pub factors: Dense,
}

impl LrProductModel {
    pub fn new(n: usize, k: usize, seed_value: u64) -> Result<Self> {
        if n == 0 || k == 0 {
            return invalid("n and k must be positive");
        }
        Ok(Self { factors: Dense::new(n, k, Activation::Identity, seed::derive(seed_value, seed::STREAM_INIT, 1)) })
    }

    pub fn k(&self) -> usize {
        self.factors.output_dim()
    }

    /// Weight vector and bias of factor `l`.
    pub fn factor(&self, l: usize) -> (Vec<f64>, f64) {
        (self.factors.weights.column(l), self.factors.bias[l])
    }

    fn logits(&self, z: &Matrix) -> Vec<f64> {
        (0..z.rows()).map(|r| z.row(r).iter().product()).collect()
    }

    pub fn to_blob(&self) -> ModelBlob {
        ModelBlob { kind: LR_BLOB_KIND, dims: vec![self.factors.input_dim() as u64, self.k() as u64], layers: vec![self.factors.clone()] }
    }
}

impl Model for LrProductModel {
    fn input_dim(&self) -> usize {
        self.factors.input_dim()
    }

    fn tasks(&self) -> usize {
        1
    }

    fn layers(&self) -> Vec<&Dense> {
        vec![&self.factors]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.factors]
    }

    fn predict(&self, x: &Matrix) -> Matrix {
        let z = self.factors.preactivation(x);
        Matrix::from_vec(x.rows(), 1, self.logits(&z).into_iter().map(sigmoid).collect())
    }

    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> (f64, Vec<DenseGrad>) {
        let z = self.factors.preactivation(x);
        let k = self.k();
        let probs = Matrix::from_vec(x.rows(), 1, self.logits(&z).into_iter().map(sigmoid).collect());
        let loss = joint_bce(&probs, y, mask);
        let dlogit = joint_bce_logit_grad(&probs, y, mask);
        let mut dz = Matrix::zeros(x.rows(), k);
        let mut prefix = vec![1.0; k + 1];
        for r in 0..x.rows() {
            let zr = z.row(r);
            for l in 0..k {
                prefix[l + 1] = prefix[l] * zr[l];
            }
            let g = dlogit.get(r, 0);
            let mut suffix = 1.0;
            let out = dz.row_mut(r);
            for l in (0..k).rev() {
                out[l] = g * prefix[l] * suffix;
                suffix *= zr[l];
            }
        }
        let (grad, _) = self.factors.backward_preact(x, &dz, false);
        (loss, vec![grad])
    }
}

/// Hidden widths `{2^(k-1), 2^k, 2^(k-1)}`.
pub fn mursi_hidden(k: usize) -> Result<[usize; 3]> {
    if k == 0 || k > 20 {
        return invalid(format!("XOR size {k} outside 1..=20"));
    }
    Ok([1 << (k - 1), 1 << k, 1 << (k - 1)])
}

/// ReLU hidden stack shared by `T` sigmoid heads. With one head this is the
/// single-task MLP baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedBottom {
    k: usize,
    pub hidden: Vec<Dense>,
    pub heads: Vec<Dense>,
}

pub type MursiModel = SharedBottom;

struct BottomCache {
    hidden: Vec<LayerCache>,
    heads: Vec<LayerCache>,
}

impl SharedBottom {
    pub fn new(n: usize, tasks: usize, k: usize, seed_value: u64) -> Result<Self> {
        if n == 0 || tasks == 0 {
            return invalid("n and task count must be positive");
        }
        let widths = mursi_hidden(k)?;
        let mut next = 0u64;
        let mut layer = |fan_in, fan_out, act| {
            next += 1;
            Dense::new(fan_in, fan_out, act, seed::derive(seed_value, seed::STREAM_INIT, next))
        };
        let mut fan_in = n;
        let mut hidden = Vec::new();
        for w in widths {
            hidden.push(layer(fan_in, w, Activation::Relu));
            fan_in = w;
        }
        let heads = (0..tasks).map(|_| layer(fan_in, 1, Activation::Sigmoid)).collect();
        Ok(Self { k, hidden, heads })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn forward(&self, x: &Matrix) -> BottomCache {
        let mut hidden: Vec<LayerCache> = Vec::with_capacity(self.hidden.len());
        for l in &self.hidden {
            let c = l.forward(hidden.last().map_or(x, |c| &c.out));
            hidden.push(c);
        }
        let top = &hidden.last().expect("three hidden layers").out;
        let heads = self.heads.iter().map(|h| h.forward(top)).collect();
        BottomCache { hidden, heads }
    }

    fn probs(cache: &BottomCache, rows: usize) -> Matrix {
        let mut p = Matrix::zeros(rows, cache.heads.len());
        for (t, h) in cache.heads.iter().enumerate() {
            for r in 0..rows {
                p.set(r, t, h.out.get(r, 0));
            }
        }
        p
    }

    pub fn to_blob(&self) -> ModelBlob {
        ModelBlob {
            kind: MLP_BLOB_KIND,
            dims: vec![self.input_dim() as u64, self.heads.len() as u64, self.k as u64],
            layers: self.layers().into_iter().cloned().collect(),
        }
    }
}

impl Model for SharedBottom {
    fn input_dim(&self) -> usize {
        self.hidden[0].input_dim()
    }

    fn tasks(&self) -> usize {
        self.heads.len()
    }

    fn layers(&self) -> Vec<&Dense> {
        self.hidden.iter().chain(&self.heads).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.hidden.iter_mut().chain(self.heads.iter_mut()).collect()
    }

    fn predict(&self, x: &Matrix) -> Matrix {
        Self::probs(&self.forward(x), x.rows())
    }

    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> (f64, Vec<DenseGrad>) {
        let rows = x.rows();
        let cache = self.forward(x);
        let probs = Self::probs(&cache, rows);
        let loss = joint_bce(&probs, y, mask);
        let dlogit = joint_bce_logit_grad(&probs, y, mask);
        let top = &cache.hidden.last().expect("hidden stack").out;
        let mut d_top = Matrix::zeros(rows, top.cols());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (t, head) in self.heads.iter().enumerate() {
            let dz = Matrix::from_vec(rows, 1, dlogit.column(t));
            let (g, dx) = head.backward_preact(top, &dz, true);
            d_top.axpy(1.0, &dx.expect("input gradient requested"));
            head_grads.push(g);
        }
        let mut grads = vec![None; self.hidden.len()];
        let mut d_out = d_top;
        for i in (0..self.hidden.len()).rev() {
            let input = if i == 0 { x } else { &cache.hidden[i - 1].out };
            let (g, dx) = self.hidden[i].backward(input, &cache.hidden[i], &d_out, i > 0);
            grads[i] = Some(g);
            if let Some(dx) = dx {
                d_out = dx;
            }
        }
        let mut out: Vec<DenseGrad> = grads.into_iter().map(|g| g.expect("filled")).collect();
        out.extend(head_grads);
        (loss, out)
    }

    fn kink_signature(&self, x: &Matrix) -> Vec<u8> {
        let cache = self.forward(x);
        let mut sig = Vec::new();
        for (l, c) in self.hidden.iter().zip(&cache.hidden) {
            l.kink_signature(c, &mut sig);
        }
        sig
    }
}

pub fn build_share_bottom_baseline(n: usize, tasks: usize, k: usize, seed_value: u64) -> Result<SharedBottom> {
    SharedBottom::new(n, tasks, k, seed_value)
}

#[derive(Serialize)]
struct BaselineConfig<'a> {
    k: usize,
    #[serde(flatten)]
    train: &'a TrainConfig,
}

fn report(attack: &str, k: usize, set: &CrpSet, cfg: &TrainConfig, outcome: &training::TrainOutcome) -> AttackReport {
    AttackReport {
        attack: attack.into(),
        task: None,
        config: serde_json::to_value(BaselineConfig { k, train: cfg }).expect("config serializes"),
        train_crps: set.len(),
        test_crps: 0,
        accuracy: None,
        epochs: outcome.epochs,
        wall_time_secs: outcome.wall_time.as_secs_f64(),
        gate_means: Vec::new(),
        seed: cfg.seed,
        tags: Default::default(),
    }
}

fn single_task(set: &CrpSet) -> Result<()> {
    if set.tasks() != 1 {
        return invalid(format!("expected one response column, found {}", set.tasks()));
    }
    Ok(())
}

pub fn train_lr_product(set: &CrpSet, k: usize, cfg: &TrainConfig) -> Result<(LrProductModel, AttackReport)> {
    single_task(set)?;
    let mut model = LrProductModel::new(set.n(), k, cfg.seed)?;
    let outcome = training::fit(&mut model, set, cfg, None)?;
    Ok((model, report("lr", k, set, cfg, &outcome)))
}

pub fn train_mursi(set: &CrpSet, k: usize, cfg: &TrainConfig) -> Result<(MursiModel, AttackReport)> {
    single_task(set)?;
    let mut model = SharedBottom::new(set.n(), 1, k, cfg.seed)?;
    let outcome = training::fit(&mut model, set, cfg, None)?;
    Ok((model, report("mursi", k, set, cfg, &outcome)))
}

/// Joint training of the shared-bottom network; one report per task plus a
/// combined report.
pub fn train_share_bottom(
    set: &CrpSet,
    k: usize,
    cfg: &TrainConfig,
    limits: Option<&LabelLimits>,
) -> Result<(SharedBottom, Vec<AttackReport>)> {
    let mut model = SharedBottom::new(set.n(), set.tasks(), k, cfg.seed)?;
    let outcome = training::fit(&mut model, set, cfg, limits)?;
    let base = report("share-bottom", k, set, cfg, &outcome);
    let mut reports: Vec<AttackReport> =
        (0..set.tasks()).map(|t| AttackReport { task: Some(t), ..base.clone() }).collect();
    reports.push(base);
    Ok((model, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_widths_follow_k() {
        assert_eq!(mursi_hidden(5).unwrap(), [16, 32, 16]);
        assert_eq!(mursi_hidden(2).unwrap(), [2, 4, 2]);
        assert!(mursi_hidden(0).is_err());
    }

    #[test]
    fn product_model_output() {
        let mut m = LrProductModel::new(2, 2, 0).unwrap();
        m.factors.weights = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        m.factors.bias = vec![0.0, 0.5];
        let x = Matrix::from_rows(&[vec![2.0, 1.0]]);
        // (2)(1.5) = 3
        assert!((m.predict(&x).get(0, 0) - sigmoid(3.0)).abs() < 1e-15);
    }

    #[test]
    fn single_head_is_plain_baseline() {
        let a = build_share_bottom_baseline(16, 1, 3, 4).unwrap();
        let b = SharedBottom::new(16, 1, 3, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers().len(), 4);
    }
}
