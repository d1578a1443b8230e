//! Gated mixture of shared experts with one gate, tower and sigmoid head per
//! task. With one task this is the single-target network; with `T` tasks the
//! experts are shared and every task keeps a private gate and tower.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::checkpoint::ModelBlob;
use crate::nn::{joint_bce, joint_bce_logit_grad, Activation, Dense, DenseGrad, LayerCache, Matrix, Model};
use crate::seed;

pub(crate) const BLOB_KIND: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n: usize,
    pub experts: usize,
    pub tasks: usize,
    /// Widths of the two ReLU layers of every expert.
    pub expert_hidden: [usize; 2],
    pub tower_hidden: usize,
    /// Sparse-softmax threshold of the gates.
    pub tau: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.experts == 0 || self.tasks == 0 {
            return invalid("n, expert count and task count must be positive");
        }
        if self.expert_hidden.contains(&0) || self.tower_hidden == 0 {
            return invalid("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.tau) {
            return invalid(format!("gate threshold {} must lie in [0, 1)", self.tau));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expert {
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub gate: Dense,
    pub tower: Dense,
    pub out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureNetwork {
    arch: Architecture,
    pub experts: Vec<Expert>,
    pub heads: Vec<TaskHead>,
}

struct ExpertCache {
    hidden: LayerCache,
    output: LayerCache,
}

struct HeadCache {
    gate: LayerCache,
    mix: Matrix,
    tower: LayerCache,
    out: LayerCache,
}

struct Forward {
    /// `None` for experts that no gate selects anywhere in the batch.
    experts: Vec<Option<ExpertCache>>,
    heads: Vec<HeadCache>,
}

impl MixtureNetwork {
    /// Glorot-initialised network; layer `i` draws from
    /// `derive(seed, INIT, i)`.
    pub fn new(arch: Architecture, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut next = 0u64;
        let mut layer = |fan_in, fan_out, act| {
            next += 1;
            Dense::new(fan_in, fan_out, act, seed::derive(seed_value, seed::STREAM_INIT, next))
        };
        let [h1, h2] = arch.expert_hidden;
        let experts = (0..arch.experts)
            .map(|_| Expert {
                hidden: layer(arch.n, h1, Activation::Relu),
                output: layer(h1, h2, Activation::Relu),
            })
            .collect();
        let heads = (0..arch.tasks)
            .map(|_| TaskHead {
                gate: layer(arch.n, arch.experts, Activation::SparseSoftmax(arch.tau)),
                tower: layer(h2, arch.tower_hidden, Activation::Relu),
                out: layer(arch.tower_hidden, 1, Activation::Sigmoid),
            })
            .collect();
        Ok(Self { arch, experts, heads })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn forward(&self, x: &Matrix) -> Forward {
        let gates: Vec<LayerCache> = self.heads.iter().map(|h| h.gate.forward(x)).collect();
        let experts: Vec<Option<ExpertCache>> = self
            .experts
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let used = gates.iter().any(|g| (0..g.out.rows()).any(|r| g.out.get(r, k) != 0.0));
                used.then(|| {
                    let hidden = e.hidden.forward(x);
                    let output = e.output.forward(&hidden.out);
                    ExpertCache { hidden, output }
                })
            })
            .collect();
        let width = self.arch.expert_hidden[1];
        let heads = self
            .heads
            .iter()
            .zip(gates)
            .map(|(head, gate)| {
                let mut mix = Matrix::zeros(x.rows(), width);
                for (k, e) in experts.iter().enumerate() {
                    if let Some(e) = e {
                        for r in 0..x.rows() {
                            let g = gate.out.get(r, k);
                            if g != 0.0 {
                                let src = e.output.out.row(r);
                                mix.row_mut(r).iter_mut().zip(src).for_each(|(m, &h)| *m += g * h);
                            }
                        }
                    }
                }
                let tower = head.tower.forward(&mix);
                let out = head.out.forward(&tower.out);
                HeadCache { gate, mix, tower, out }
            })
            .collect();
        Forward { experts, heads }
    }

    fn probs(&self, fwd: &Forward, rows: usize) -> Matrix {
        let mut p = Matrix::zeros(rows, self.heads.len());
        for (t, h) in fwd.heads.iter().enumerate() {
            for r in 0..rows {
                p.set(r, t, h.out.out.get(r, 0));
            }
        }
        p
    }

    /// Gate weights per task, `rows x experts`.
    pub fn gate_weights(&self, x: &Matrix) -> Vec<Matrix> {
        self.heads.iter().map(|h| h.gate.infer(x)).collect()
    }

    /// Mean gate weight of every expert over `x`, one vector per task.
    pub fn gate_means(&self, x: &Matrix) -> Vec<Vec<f64>> {
        self.gate_weights(x)
            .iter()
            .map(|g| g.column_sums().into_iter().map(|s| s / x.rows().max(1) as f64).collect())
            .collect()
    }

    pub fn to_blob(&self) -> ModelBlob {
        let a = &self.arch;
        ModelBlob {
            kind: BLOB_KIND,
            dims: [a.n, a.experts, a.tasks, a.expert_hidden[0], a.expert_hidden[1], a.tower_hidden]
                .iter()
                .map(|&d| d as u64)
                .collect(),
            layers: self.layers().into_iter().cloned().collect(),
        }
    }

    pub fn from_blob(blob: ModelBlob) -> Result<Self> {
        let bad = |m: &str| Error::Format { offset: 0, message: format!("mixture checkpoint: {m}") };
        if blob.kind != BLOB_KIND || blob.dims.len() != 6 {
            return Err(bad("wrong kind or dimension list"));
        }
        let d: Vec<usize> = blob.dims.iter().map(|&v| v as usize).collect();
        let tau = blob
            .layers
            .get(2 * d[1])
            .map(|l| l.activation.tau())
            .ok_or_else(|| bad("missing gate layer"))?;
        let arch = Architecture {
            n: d[0],
            experts: d[1],
            tasks: d[2],
            expert_hidden: [d[3], d[4]],
            tower_hidden: d[5],
            tau,
        };
        let template = Self::new(arch.clone(), 0).map_err(|e| bad(&e.to_string()))?;
        if blob.layers.len() != 2 * arch.experts + 3 * arch.tasks {
            return Err(bad("layer count does not match dimensions"));
        }
        for (a, b) in template.layers().iter().zip(&blob.layers) {
            if a.weights.shape() != b.weights.shape() || a.activation != b.activation {
                return Err(bad("layer shape or activation mismatch"));
            }
        }
        let mut it = blob.layers.into_iter();
        let mut take = || it.next().expect("length checked");
        let experts = (0..arch.experts).map(|_| Expert { hidden: take(), output: take() }).collect();
        let heads = (0..arch.tasks)
            .map(|_| TaskHead { gate: take(), tower: take(), out: take() })
            .collect();
        Ok(Self { arch, experts, heads })
    }
}

/// Gate-weighted sum of expert outputs, `sum_k g_k h_k`.
pub fn combine_experts(gates: &[f64], outputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if gates.len() != outputs.len() || gates.is_empty() {
        return invalid(format!("{} gate weights for {} experts", gates.len(), outputs.len()));
    }
    let width = outputs[0].len();
    if outputs.iter().any(|o| o.len() != width) {
        return invalid("expert outputs differ in width");
    }
    let mut acc = vec![0.0; width];
    for (g, o) in gates.iter().zip(outputs) {
        acc.iter_mut().zip(o).for_each(|(a, &h)| *a += g * h);
    }
    Ok(acc)
}

impl Model for MixtureNetwork {
    fn input_dim(&self) -> usize {
        self.arch.n
    }

    fn tasks(&self) -> usize {
        self.heads.len()
    }

    fn layers(&self) -> Vec<&Dense> {
        let mut v = Vec::with_capacity(2 * self.experts.len() + 3 * self.heads.len());
        for e in &self.experts {
            v.push(&e.hidden);
            v.push(&e.output);
        }
        for h in &self.heads {
            v.extend([&h.gate, &h.tower, &h.out]);
        }
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v = Vec::with_capacity(2 * self.experts.len() + 3 * self.heads.len());
        for e in &mut self.experts {
            v.push(&mut e.hidden);
            v.push(&mut e.output);
        }
        for h in &mut self.heads {
            v.push(&mut h.gate);
            v.push(&mut h.tower);
            v.push(&mut h.out);
        }
        v
    }

    fn predict(&self, x: &Matrix) -> Matrix {
        let fwd = self.forward(x);
        self.probs(&fwd, x.rows())
    }

    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> (f64, Vec<DenseGrad>) {
        let rows = x.rows();
        let fwd = self.forward(x);
        let probs = self.probs(&fwd, rows);
        let loss = joint_bce(&probs, y, mask);
        let dlogit = joint_bce_logit_grad(&probs, y, mask);

        let width = self.arch.expert_hidden[1];
        let mut d_expert: Vec<Option<Matrix>> =
            fwd.experts.iter().map(|e| e.as_ref().map(|_| Matrix::zeros(rows, width))).collect();
        let mut head_grads = Vec::with_capacity(3 * self.heads.len());

        for (t, (head, hc)) in self.heads.iter().zip(&fwd.heads).enumerate() {
            let dz_out = Matrix::from_vec(rows, 1, dlogit.column(t));
            let (g_out, d_tower) = head.out.backward_preact(&hc.tower.out, &dz_out, true);
            let (g_tower, d_mix) = head.tower.backward(&hc.mix, &hc.tower, &d_tower.unwrap(), true);
            let d_mix = d_mix.unwrap();

            let mut d_gate = Matrix::zeros(rows, self.experts.len());
            for (k, e) in fwd.experts.iter().enumerate() {
                let Some(e) = e else { continue };
                let dh = d_expert[k].as_mut().unwrap();
                for r in 0..rows {
                    let dm = d_mix.row(r);
                    let h = e.output.out.row(r);
                    d_gate.set(r, k, dm.iter().zip(h).map(|(a, b)| a * b).sum());
                    let g = hc.gate.out.get(r, k);
                    if g != 0.0 {
                        dh.row_mut(r).iter_mut().zip(dm).for_each(|(d, &m)| *d += g * m);
                    }
                }
            }
            let (g_gate, _) = head.gate.backward(x, &hc.gate, &d_gate, false);
            head_grads.extend([g_gate, g_tower, g_out]);
        }

        let mut grads = Vec::with_capacity(2 * self.experts.len() + head_grads.len());
        for ((e, ec), dh) in self.experts.iter().zip(&fwd.experts).zip(&d_expert) {
            match (ec, dh) {
                (Some(ec), Some(dh)) => {
                    let (g2, d1) = e.output.backward(&ec.hidden.out, &ec.output, dh, true);
                    let (g1, _) = e.hidden.backward(x, &ec.hidden, &d1.unwrap(), false);
                    grads.push(g1);
                    grads.push(g2);
                }
                _ => {
                    grads.push(DenseGrad::zeros_like(&e.hidden));
                    grads.push(DenseGrad::zeros_like(&e.output));
                }
            }
        }
        grads.extend(head_grads);
        (loss, grads)
    }

    fn kink_signature(&self, x: &Matrix) -> Vec<u8> {
        let fwd = self.forward(x);
        let mut sig = Vec::new();
        for (e, ec) in self.experts.iter().zip(&fwd.experts) {
            match ec {
                Some(ec) => {
                    e.hidden.kink_signature(&ec.hidden, &mut sig);
                    e.output.kink_signature(&ec.output, &mut sig);
                }
                None => sig.push(2),
            }
        }
        for (h, hc) in self.heads.iter().zip(&fwd.heads) {
            h.gate.kink_signature(&hc.gate, &mut sig);
            h.tower.kink_signature(&hc.tower, &mut sig);
        }
        sig
    }
}
