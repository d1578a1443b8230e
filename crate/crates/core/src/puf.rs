//! Delay-based strong PUFs under the additive delay model.
//!
//! A single arbiter chain is a race between two edges through `n` switch
//! stages. Only the difference between the two arrival times matters, so a
//! chain is fully described by two reals per stage: the delay difference
//! added when the stage passes its inputs straight through, and the one
//! added when it crosses them (crossing also swaps the sign of the
//! difference accumulated so far).
//!
//! Compositions built on top of chains:
//!
//! * k-XOR arbiter PUF: parity of `k` chains on the same challenge.
//! * Feed-forward XOR PUF: inside each chain, an intermediate arbiter at a
//!   tap stage drives the select bit of a later insert stage.
//! * Interpose PUF: an upper XOR PUF's response is inserted into the middle
//!   of the challenge fed to a lower XOR PUF with one extra stage.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Per-stage delay differences of one arbiter line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbiterChain {
    sigma: Vec<f64>,
    kappa: Vec<f64>,
    seed: u64,
}

impl ArbiterChain {
    /// Draws `sigma` and `kappa` i.i.d. from N(0, 1).
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return invalid("arbiter chain needs at least one stage");
        }
        let mut rng = seed::rng(seed);
        let sigma = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let kappa = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self { sigma, kappa, seed })
    }

    /// Builds a chain from explicit parameters (seed recorded as 0).
    pub fn from_params(sigma: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.len() != kappa.len() {
            return invalid(format!(
                "sigma/kappa lengths must match and be nonzero (got {} and {})",
                sigma.len(),
                kappa.len()
            ));
        }
        Ok(Self { sigma, kappa, seed: 0 })
    }

    pub fn stages(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn step(&self, delta: f64, stage: usize, bit: u8) -> f64 {
        if bit == 0 {
            delta + self.sigma[stage]
        } else {
            -delta + self.kappa[stage]
        }
    }

    /// Runs the stage recursion and returns the response bit together with
    /// the delay difference after every stage.
    pub fn eval(&self, challenge: &[u8]) -> Result<(u8, Vec<f64>)> {
        check_len(challenge, self.stages())?;
        let mut trace = Vec::with_capacity(self.stages());
        let mut delta = 0.0;
        for (i, &c) in challenge.iter().enumerate() {
            delta = self.step(delta, i, c);
            trace.push(delta);
        }
        Ok((arbiter(delta), trace))
    }

    /// Final delay difference, without bounds checking against `n`.
    pub fn delay(&self, challenge: &[u8]) -> f64 {
        challenge
            .iter()
            .enumerate()
            .fold(0.0, |delta, (i, &c)| self.step(delta, i, c))
    }

    /// Final delay difference with feed-forward loops: the tap stage's
    /// intermediate arbiter bit replaces the challenge bit of the insert
    /// stage.
    pub fn delay_with_loops(&self, challenge: &[u8], loops: &[FfLoop]) -> f64 {
        if loops.is_empty() {
            return self.delay(challenge);
        }
        let n = self.stages();
        // pending[s] = Some(bit) once the loop feeding stage s has fired
        let mut pending: Vec<Option<u8>> = vec![None; n];
        let mut delta = 0.0;
        for i in 0..n {
            let bit = pending[i].unwrap_or(challenge[i]);
            delta = self.step(delta, i, bit);
            for lp in loops.iter().filter(|lp| lp.tap == i + 1) {
                pending[lp.insert - 1] = Some(arbiter(delta));
            }
        }
        delta
    }

    /// Linear threshold form `(w, b)` with `eval == [<w, x> + b > 0]`, where
    /// `x` is the parity feature vector of the challenge.
    pub fn to_linear_weights(&self) -> (Vec<f64>, f64) {
        // Writing phi_i = 1 - 2 c_i, each stage is
        //   d_i = phi_i d_{i-1} + beta_i + phi_i alpha_i
        // with alpha = (sigma - kappa)/2, beta = (sigma + kappa)/2. Unrolling
        // gives d_n = sum alpha_i x_i + sum beta_i x_{i+1} with x_{n+1} = 1.
        let n = self.stages();
        let alpha = |i: usize| 0.5 * (self.sigma[i] - self.kappa[i]);
        let beta = |i: usize| 0.5 * (self.sigma[i] + self.kappa[i]);
        let mut w = Vec::with_capacity(n);
        w.push(alpha(0));
        for i in 1..n {
            w.push(alpha(i) + beta(i - 1));
        }
        (w, beta(n - 1))
    }
}

/// Arbiter decision; an exact tie resolves to 0.
#[inline]
pub fn arbiter(delta: f64) -> u8 {
    u8::from(delta > 0.0)
}

fn check_len(challenge: &[u8], n: usize) -> Result<()> {
    if challenge.len() != n {
        return invalid(format!(
            "challenge has {} bits, expected {n}",
            challenge.len()
        ));
    }
    Ok(())
}

/// A feed-forward loop, 1-based stage indices, `tap < insert`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfLoop {
    pub tap: usize,
    pub insert: usize,
}

/// Composition kind, without stage count or seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PufKind {
    Apuf,
    XorApuf { k: usize },
    FfXorApuf { k: usize, loops: usize, homogeneous: bool },
    InterposePuf { upper: usize, lower: usize },
}

impl PufKind {
    /// XOR width of the component that produces the response.
    pub fn xor_width(&self) -> usize {
        match *self {
            PufKind::Apuf => 1,
            PufKind::XorApuf { k } | PufKind::FfXorApuf { k, .. } => k,
            PufKind::InterposePuf { lower, .. } => lower,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PufKind::XorApuf { k } | PufKind::FfXorApuf { k, .. } if k == 0 => {
                invalid("XOR width k must be at least 1")
            }
            PufKind::InterposePuf { upper, lower } if upper == 0 || lower == 0 => {
                invalid("interpose layers need at least one chain each")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PufKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PufKind::Apuf => write!(f, "apuf"),
            PufKind::XorApuf { k } => write!(f, "xor:{k}"),
            PufKind::FfXorApuf { k, loops, homogeneous } => {
                let h = if homogeneous { "homo" } else { "hetero" };
                write!(f, "ff:{k}-{loops}:{h}")
            }
            PufKind::InterposePuf { upper, lower } => write!(f, "ipuf:{upper},{lower}"),
        }
    }
}

impl FromStr for PufKind {
    type Err = Error;

    /// Parses `apuf`, `xor:K`, `ff:K-L:homo|hetero` or `ipuf:X,Y`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unparsable PUF spec '{s}'"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let s_trim = s.trim();
        let (head, rest) = match s_trim.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s_trim, None),
        };
        let kind = match (head, rest) {
            ("apuf", None) => PufKind::Apuf,
            ("xor", Some(k)) => PufKind::XorApuf { k: num(k)? },
            ("ff", Some(r)) => {
                let (kl, h) = r.split_once(':').ok_or_else(bad)?;
                let (k, l) = kl.split_once('-').ok_or_else(bad)?;
                let homogeneous = match h {
                    "homo" => true,
                    "hetero" => false,
                    _ => return Err(bad()),
                };
                PufKind::FfXorApuf { k: num(k)?, loops: num(l)?, homogeneous }
            }
            ("ipuf", Some(r)) => {
                let (x, y) = r.split_once(',').ok_or_else(bad)?;
                PufKind::InterposePuf { upper: num(x)?, lower: num(y)? }
            }
            _ => return Err(bad()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Declarative description of one PUF: kind, stage count, seed and (for
/// feed-forward kinds) the loop placement of each chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PufSpec {
    pub kind: PufKind,
    pub n: usize,
    pub seed: u64,
    /// One loop list per chain; empty for non-FF kinds.
    pub loops: Vec<Vec<FfLoop>>,
}

impl PufSpec {
    /// Builds a spec, drawing feed-forward loop positions from `seed`.
    pub fn new(kind: PufKind, n: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        if n == 0 {
            return invalid("stage count must be at least 1");
        }
        let loops = match kind {
            PufKind::FfXorApuf { k, loops, homogeneous } => {
                if loops > n / 2 {
                    return invalid(format!("{loops} loops do not fit in {n} stages"));
                }
                let mut rng = seed::rng(seed::derive(seed, seed::STREAM_LOOPS, 0));
                if homogeneous {
                    let shared = draw_loops(&mut rng, n, loops);
                    vec![shared; k]
                } else {
                    (0..k).map(|_| draw_loops(&mut rng, n, loops)).collect()
                }
            }
            _ => Vec::new(),
        };
        Ok(Self { kind, n, seed, loops })
    }

    /// Parses the CLI syntax and attaches `n` and `seed`.
    pub fn parse(text: &str, n: usize, seed: u64) -> Result<Self> {
        Self::new(text.parse()?, n, seed)
    }

    /// Replaces the drawn loop positions with explicit ones.
    pub fn with_loops(mut self, loops: Vec<Vec<FfLoop>>) -> Result<Self> {
        let PufKind::FfXorApuf { k, .. } = self.kind else {
            return invalid("loop positions only apply to feed-forward PUFs");
        };
        if loops.len() != k {
            return invalid(format!("expected loop lists for {k} chains, got {}", loops.len()));
        }
        for lp in loops.iter().flatten() {
            if !(1 <= lp.tap && lp.tap < lp.insert && lp.insert <= self.n) {
                return invalid(format!(
                    "loop ({}, {}) violates 1 <= tap < insert <= {}",
                    lp.tap, lp.insert, self.n
                ));
            }
        }
        for chain in &loops {
            let mut inserts: Vec<_> = chain.iter().map(|l| l.insert).collect();
            inserts.sort_unstable();
            if inserts.windows(2).any(|w| w[0] == w[1]) {
                return invalid("two loops share an insert stage");
            }
        }
        self.loops = loops;
        Ok(self)
    }

    pub fn instantiate(&self) -> Result<PufInstance> {
        PufInstance::new(self.clone())
    }
}

impl fmt::Display for PufSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

/// Uniform over unordered stage pairs, with distinct insert stages.
fn draw_loops<R: Rng>(rng: &mut R, n: usize, count: usize) -> Vec<FfLoop> {
    let mut out: Vec<FfLoop> = Vec::with_capacity(count);
    while out.len() < count {
        let pair = sample(rng, n, 2);
        let (a, b) = (pair.index(0) + 1, pair.index(1) + 1);
        let lp = FfLoop { tap: a.min(b), insert: a.max(b) };
        if out.iter().all(|o| o.insert != lp.insert) {
            out.push(lp);
        }
    }
    out
}

/// A spec together with its instantiated chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PufInstance {
    spec: PufSpec,
    /// For interpose PUFs: `upper` chains of `n` stages, then `lower`
    /// chains of `n + 1` stages.
    chains: Vec<ArbiterChain>,
    noise: f64,
}

impl PufInstance {
    pub fn new(spec: PufSpec) -> Result<Self> {
        spec.kind.validate()?;
        let chain = |i: usize, n: usize| {
            ArbiterChain::new(n, seed::derive(spec.seed, seed::STREAM_CHAIN, i as u64))
        };
        let chains = match spec.kind {
            PufKind::Apuf => vec![chain(0, spec.n)?],
            PufKind::XorApuf { k } | PufKind::FfXorApuf { k, .. } => {
                (0..k).map(|i| chain(i, spec.n)).collect::<Result<_>>()?
            }
            PufKind::InterposePuf { upper, lower } => (0..upper)
                .map(|i| chain(i, spec.n))
                .chain((upper..upper + lower).map(|i| chain(i, spec.n + 1)))
                .collect::<Result<_>>()?,
        };
        if let PufKind::FfXorApuf { k, .. } = spec.kind {
            if spec.loops.len() != k {
                return invalid("feed-forward spec is missing loop positions");
            }
        }
        Ok(Self { spec, chains, noise: 0.0 })
    }

    /// Builds an instance from explicit chains (used by tests and to pin
    /// two instances to the same silicon).
    pub fn from_chains(spec: PufSpec, chains: Vec<ArbiterChain>) -> Result<Self> {
        let expected = Self::new(spec.clone())?;
        let shapes_match = expected.chains.len() == chains.len()
            && expected
                .chains
                .iter()
                .zip(&chains)
                .all(|(a, b)| a.stages() == b.stages());
        if !shapes_match {
            return invalid("chain count or lengths do not match the PUF kind");
        }
        Ok(Self { spec, chains, noise: 0.0 })
    }

    /// Standard deviation of Gaussian noise added to every final delay
    /// difference by [`PufInstance::eval_noisy`].
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise = sigma;
        self
    }

    pub fn spec(&self) -> &PufSpec {
        &self.spec
    }

    pub fn chains(&self) -> &[ArbiterChain] {
        &self.chains
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Noiseless response.
    pub fn eval(&self, challenge: &[u8]) -> Result<u8> {
        check_len(challenge, self.spec.n)?;
        Ok(self.eval_with(challenge, |d, _| d))
    }

    /// Response with per-chain Gaussian noise of the configured magnitude.
    pub fn eval_noisy<R: Rng>(&self, challenge: &[u8], rng: &mut R) -> Result<u8> {
        check_len(challenge, self.spec.n)?;
        if self.noise == 0.0 {
            return Ok(self.eval_with(challenge, |d, _| d));
        }
        let normal = Normal::new(0.0, self.noise)
            .map_err(|e| Error::InvalidArgument(format!("noise level: {e}")))?;
        let noise: Vec<f64> = (0..self.chains.len()).map(|_| normal.sample(rng)).collect();
        Ok(self.eval_with(challenge, |d, i| d + noise[i]))
    }

    fn eval_with(&self, c: &[u8], perturb: impl Fn(f64, usize) -> f64) -> u8 {
        let xor = |range: std::ops::Range<usize>, c: &[u8]| {
            range.fold(0u8, |acc, i| {
                let d = match self.spec.kind {
                    PufKind::FfXorApuf { .. } => {
                        self.chains[i].delay_with_loops(c, &self.spec.loops[i])
                    }
                    _ => self.chains[i].delay(c),
                };
                acc ^ arbiter(perturb(d, i))
            })
        };
        match self.spec.kind {
            PufKind::InterposePuf { upper, lower } => {
                let up = xor(0..upper, c);
                let lower_challenge = interpose(c, up);
                xor(upper..upper + lower, &lower_challenge)
            }
            _ => xor(0..self.chains.len(), c),
        }
    }
}

/// Inserts `bit` at 1-based position `n/2 + 1` of an `n`-bit challenge.
pub fn interpose(challenge: &[u8], bit: u8) -> Vec<u8> {
    let mid = challenge.len() / 2;
    let mut out = Vec::with_capacity(challenge.len() + 1);
    out.extend_from_slice(&challenge[..mid]);
    out.push(bit);
    out.extend_from_slice(&challenge[mid..]);
    out
}
