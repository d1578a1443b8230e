//! Challenges, the parity feature transform, CRP sets and their file
//! formats.
//!
//! ## CRPB v1
//!
//! Little-endian binary container:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `"CRPB"`            |
//! | 4      | 1    | version = 1               |
//! | 5      | 1    | flags = 0                 |
//! | 6      | 2    | reserved = 0              |
//! | 8      | 4    | stage count `n` (u32)     |
//! | 12     | 4    | task count `T` (u32)      |
//! | 16     | 8    | record count (u64)        |
//! | 24     | ...  | records                   |
//!
//! Each record is `ceil(n/8)` challenge bytes followed by `ceil(T/8)`
//! response bytes. Bit `i` lives in bit `i % 8` (LSB first) of byte
//! `i / 8`; padding bits are zero.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Matrix;
use crate::puf::{PufInstance, PufSpec};
use crate::seed;

pub const CRPB_MAGIC: &[u8; 4] = b"CRPB";
pub const CRPB_VERSION: u8 = 1;
pub const CRPB_HEADER_LEN: usize = 24;
pub const GENERATOR_VERSION: &str = concat!("puf-moe/", env!("CARGO_PKG_VERSION"));

/// A challenge as `n` bits in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Challenge(Vec<u8>);

impl Challenge {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return invalid(format!("challenge bit {i} is {} (must be 0 or 1)", bits[i]));
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parity features, every entry `+1` or `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// `x_i = prod_{j >= i} (1 - 2 c_j)`.
pub fn transform_challenge(c: &Challenge) -> FeatureVector {
    let mut x = vec![0.0; c.len()];
    transform_bits_into(c.bits(), &mut x);
    FeatureVector(x)
}

/// Right-to-left suffix product into `out`.
pub fn transform_bits_into(bits: &[u8], out: &mut [f64]) {
    debug_assert_eq!(bits.len(), out.len());
    let mut acc = 1.0;
    for (b, x) in bits.iter().zip(out.iter_mut()).rev() {
        if *b != 0 {
            acc = -acc;
        }
        *x = acc;
    }
}

#[inline]
fn stride(bits: usize) -> usize {
    bits.div_ceil(8)
}

fn pack_into(bits: &[u8], out: &mut [u8]) {
    out.iter_mut().for_each(|b| *b = 0);
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
}

fn unpack_into(bytes: &[u8], out: &mut [u8]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (bytes[i / 8] >> (i % 8)) & 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Simulated,
    Crpb,
    External,
}

/// Provenance of a CRP set. Not stored in CRPB files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpMeta {
    pub origin: Origin,
    pub specs: Vec<String>,
    pub puf_seeds: Vec<u64>,
    pub challenge_seed: Option<u64>,
    pub generator: String,
}

impl CrpMeta {
    pub fn with_origin(origin: Origin) -> Self {
        Self {
            origin,
            specs: Vec::new(),
            puf_seeds: Vec::new(),
            challenge_seed: None,
            generator: GENERATOR_VERSION.to_string(),
        }
    }
}

/// Challenges with `T` aligned response columns, stored bit-packed.
#[derive(Clone, Debug)]
pub struct CrpSet {
    n: usize,
    tasks: usize,
    challenges: Vec<u8>,
    responses: Vec<u8>,
    pub meta: CrpMeta,
}

impl PartialEq for CrpSet {
    /// Payload equality; provenance metadata is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.tasks == other.tasks
            && self.challenges == other.challenges
            && self.responses == other.responses
    }
}

impl CrpSet {
    pub fn new(n: usize, tasks: usize, meta: CrpMeta) -> Result<Self> {
        if n == 0 || tasks == 0 {
            return invalid("CRP sets need n >= 1 and at least one task");
        }
        Ok(Self { n, tasks, challenges: Vec::new(), responses: Vec::new(), meta })
    }

    pub fn with_capacity(n: usize, tasks: usize, meta: CrpMeta, rows: usize) -> Result<Self> {
        let mut s = Self::new(n, tasks, meta)?;
        s.challenges.reserve(rows * stride(n));
        s.responses.reserve(rows * stride(tasks));
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn len(&self) -> usize {
        self.challenges.len() / stride(self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.challenges.is_empty()
    }

    pub fn push(&mut self, challenge: &[u8], responses: &[u8]) -> Result<()> {
        if challenge.len() != self.n || responses.len() != self.tasks {
            return invalid(format!(
                "row has {} challenge bits and {} responses, expected {} and {}",
                challenge.len(),
                responses.len(),
                self.n,
                self.tasks
            ));
        }
        if challenge.iter().chain(responses).any(|&b| b > 1) {
            return invalid("CRP bits must be 0 or 1");
        }
        let (cs, rs) = (stride(self.n), stride(self.tasks));
        let c0 = self.challenges.len();
        self.challenges.resize(c0 + cs, 0);
        pack_into(challenge, &mut self.challenges[c0..]);
        let r0 = self.responses.len();
        self.responses.resize(r0 + rs, 0);
        pack_into(responses, &mut self.responses[r0..]);
        Ok(())
    }

    /// Packed challenge bytes of row `i`.
    pub fn challenge_bytes(&self, i: usize) -> &[u8] {
        let s = stride(self.n);
        &self.challenges[i * s..(i + 1) * s]
    }

    pub fn challenge(&self, i: usize) -> Challenge {
        let mut bits = vec![0; self.n];
        unpack_into(self.challenge_bytes(i), &mut bits);
        Challenge(bits)
    }

    pub fn response(&self, i: usize, task: usize) -> u8 {
        let s = stride(self.tasks);
        (self.responses[i * s + task / 8] >> (task % 8)) & 1
    }

    pub fn responses(&self, i: usize) -> Vec<u8> {
        (0..self.tasks).map(|t| self.response(i, t)).collect()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> CrpSet {
        let (cs, rs) = (stride(self.n), stride(self.tasks));
        let mut out = CrpSet {
            n: self.n,
            tasks: self.tasks,
            challenges: Vec::with_capacity(idx.len() * cs),
            responses: Vec::with_capacity(idx.len() * rs),
            meta: self.meta.clone(),
        };
        for &i in idx {
            out.challenges.extend_from_slice(&self.challenges[i * cs..(i + 1) * cs]);
            out.responses.extend_from_slice(&self.responses[i * rs..(i + 1) * rs]);
        }
        out
    }

    pub fn head(&self, count: usize) -> CrpSet {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }

    /// Single-column view of task `t`.
    pub fn task(&self, t: usize) -> Result<CrpSet> {
        if t >= self.tasks {
            return invalid(format!("task {t} out of range ({} tasks)", self.tasks));
        }
        let mut meta = self.meta.clone();
        if meta.specs.len() == self.tasks {
            meta.specs = vec![meta.specs[t].clone()];
        }
        if meta.puf_seeds.len() == self.tasks {
            meta.puf_seeds = vec![meta.puf_seeds[t]];
        }
        let mut out = CrpSet::with_capacity(self.n, 1, meta, self.len())?;
        out.challenges = self.challenges.clone();
        out.responses = (0..self.len()).map(|i| self.response(i, t)).collect();
        Ok(out)
    }

    /// Same payload with provenance stripped (origin kept).
    pub fn payload_only(&self) -> CrpSet {
        let mut out = self.clone();
        out.meta = CrpMeta::with_origin(self.meta.origin);
        out
    }

    /// Parity features of the given rows, `rows x n`.
    pub fn features(&self, rows: &[usize]) -> Matrix {
        let mut x = Matrix::zeros(rows.len(), self.n);
        let mut bits = vec![0u8; self.n];
        for (dst, &src) in rows.iter().enumerate() {
            unpack_into(self.challenge_bytes(src), &mut bits);
            transform_bits_into(&bits, x.row_mut(dst));
        }
        x
    }

    /// Responses of the given rows as `0.0`/`1.0`, `rows x T`.
    pub fn labels(&self, rows: &[usize]) -> Matrix {
        let mut y = Matrix::zeros(rows.len(), self.tasks);
        for (dst, &src) in rows.iter().enumerate() {
            for t in 0..self.tasks {
                y.set(dst, t, f64::from(self.response(src, t)));
            }
        }
        y
    }

    /// First `train` rows for training and `test` rows from the remainder
    /// whose challenges do not occur in the training part.
    pub fn disjoint_holdout(&self, train: usize, test: usize) -> Result<(CrpSet, CrpSet)> {
        if train + test > self.len() {
            return invalid(format!(
                "requested {train} train + {test} test rows but the set has {}",
                self.len()
            ));
        }
        let seen: HashSet<&[u8]> = (0..train).map(|i| self.challenge_bytes(i)).collect();
        let test_idx: Vec<usize> = (train..self.len())
            .filter(|&i| !seen.contains(self.challenge_bytes(i)))
            .take(test)
            .collect();
        if test_idx.len() < test {
            return invalid(format!(
                "only {} rows remain disjoint from the {train} training rows, {test} requested",
                test_idx.len()
            ));
        }
        let train_idx: Vec<usize> = (0..train).collect();
        Ok((self.select(&train_idx), self.select(&test_idx)))
    }
}

/// Draws `count` uniform challenges from `challenge_seed` and queries every
/// instance with each of them.
pub fn generate_crps_for(
    instances: &[PufInstance],
    challenge_seed: u64,
    count: usize,
) -> Result<CrpSet> {
    let Some(first) = instances.first() else {
        return invalid("at least one PUF is required");
    };
    if count == 0 {
        return invalid("count must be at least 1");
    }
    let n = first.n();
    if let Some(bad) = instances.iter().find(|p| p.n() != n) {
        return invalid(format!("stage counts differ ({} vs {})", n, bad.n()));
    }
    let meta = CrpMeta {
        origin: Origin::Simulated,
        specs: instances.iter().map(|p| p.spec().to_string()).collect(),
        puf_seeds: instances.iter().map(|p| p.spec().seed).collect(),
        challenge_seed: Some(challenge_seed),
        generator: GENERATOR_VERSION.to_string(),
    };
    let mut set = CrpSet::with_capacity(n, instances.len(), meta, count)?;
    let mut rng = seed::rng(challenge_seed);
    let words = n.div_ceil(64);
    let mut bits = vec![0u8; n];
    let mut resp = vec![0u8; instances.len()];
    for _ in 0..count {
        for w in 0..words {
            let word = rng.next_u64();
            for (b, bit) in bits[w * 64..n.min((w + 1) * 64)].iter_mut().enumerate() {
                *bit = ((word >> b) & 1) as u8;
            }
        }
        for (r, p) in resp.iter_mut().zip(instances) {
            *r = p.eval(&bits)?;
        }
        set.push(&bits, &resp)?;
    }
    Ok(set)
}

/// Instantiates `specs` and delegates to [`generate_crps_for`].
pub fn generate_crps(specs: &[PufSpec], challenge_seed: u64, count: usize) -> Result<CrpSet> {
    if let Some(first) = specs.first() {
        if let Some(bad) = specs.iter().find(|s| s.n != first.n) {
            return invalid(format!("stage counts differ ({} vs {})", first.n, bad.n));
        }
    }
    let instances = specs.iter().map(PufSpec::instantiate).collect::<Result<Vec<_>>>()?;
    generate_crps_for(&instances, challenge_seed, count)
}

/// Seeded shuffled partition. Rows sharing a challenge always land in the
/// same part, so the parts never share a challenge.
pub fn split(set: &CrpSet, train_fraction: f64, seed_value: u64) -> Result<(CrpSet, CrpSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train fraction {train_fraction} must lie in (0, 1)"));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<&[u8], usize> = HashMap::new();
    for i in 0..set.len() {
        let g = *index.entry(set.challenge_bytes(i)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut rng = seed::rng(seed::derive(seed_value, seed::STREAM_SPLIT, 0));
    groups.shuffle(&mut rng);
    let target = (train_fraction * set.len() as f64).round() as usize;
    let (mut train, mut test) = (Vec::with_capacity(target), Vec::new());
    for g in groups {
        if train.len() + g.len() <= target {
            train.extend(g);
        } else {
            test.extend(g);
        }
    }
    Ok((set.select(&train), set.select(&test)))
}

pub fn encode_crpb(set: &CrpSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(CRPB_HEADER_LEN + set.challenges.len() + set.responses.len());
    out.extend_from_slice(CRPB_MAGIC);
    out.push(CRPB_VERSION);
    out.push(0);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(set.n as u32).to_le_bytes());
    out.extend_from_slice(&(set.tasks as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    let (cs, rs) = (stride(set.n), stride(set.tasks));
    for i in 0..set.len() {
        out.extend_from_slice(&set.challenges[i * cs..(i + 1) * cs]);
        out.extend_from_slice(&set.responses[i * rs..(i + 1) * rs]);
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn padding_ok(bytes: &[u8], bits: usize) -> bool {
    let rem = bits % 8;
    rem == 0 || bytes[bytes.len() - 1] >> rem == 0
}

pub fn decode_crpb(buf: &[u8]) -> Result<CrpSet> {
    if buf.len() < CRPB_HEADER_LEN {
        return Err(format_err(buf.len(), "truncated header"));
    }
    if &buf[0..4] != CRPB_MAGIC {
        return Err(format_err(0, "bad magic (expected \"CRPB\")"));
    }
    if buf[4] != CRPB_VERSION {
        return Err(format_err(4, format!("unsupported version {}", buf[4])));
    }
    if buf[5] != 0 {
        return Err(format_err(5, format!("unknown flags {:#04x}", buf[5])));
    }
    if buf[6] != 0 || buf[7] != 0 {
        return Err(format_err(6, "reserved field is not zero"));
    }
    let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let tasks = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    if n == 0 {
        return Err(format_err(8, "stage count is zero"));
    }
    if tasks == 0 {
        return Err(format_err(12, "task count is zero"));
    }
    let (cs, rs) = (stride(n), stride(tasks));
    let record = (cs + rs) as u64;
    let body = (buf.len() - CRPB_HEADER_LEN) as u64;
    let expected = count.checked_mul(record).ok_or_else(|| format_err(16, "record count overflows"))?;
    if body < expected {
        let whole = body / record;
        return Err(format_err(
            CRPB_HEADER_LEN + (whole * record) as usize,
            format!("truncated: {count} records declared, {whole} complete"),
        ));
    }
    if body > expected {
        return Err(format_err(
            CRPB_HEADER_LEN + expected as usize,
            format!("{} trailing bytes", body - expected),
        ));
    }
    let count = count as usize;
    let mut set = CrpSet::with_capacity(n, tasks, CrpMeta::with_origin(Origin::Crpb), count)
        .map_err(|e| format_err(8, e.to_string()))?;
    for i in 0..count {
        let off = CRPB_HEADER_LEN + i * (cs + rs);
        let c = &buf[off..off + cs];
        let r = &buf[off + cs..off + cs + rs];
        if !padding_ok(c, n) {
            return Err(format_err(off + cs - 1, "nonzero challenge padding bits"));
        }
        if !padding_ok(r, tasks) {
            return Err(format_err(off + cs + rs - 1, "nonzero response padding bits"));
        }
        set.challenges.extend_from_slice(c);
        set.responses.extend_from_slice(r);
    }
    Ok(set)
}

pub fn save_crps(set: &CrpSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_crpb(set))?;
    Ok(())
}

pub fn load_crps(path: impl AsRef<Path>) -> Result<CrpSet> {
    decode_crpb(&fs::read(path)?)
}

/// Reads comma-separated rows of `n` challenge bits followed by `tasks`
/// response bits. A first line containing any non-binary token is taken as
/// a header.
pub fn import_csv(path: impl AsRef<Path>, n: usize, tasks: usize) -> Result<CrpSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_io)?;
    let mut set = CrpSet::new(n, tasks, CrpMeta::with_origin(Origin::External))?;
    let mut row = vec![0u8; n + tasks];
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_io)?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        let binary = |t: &str| matches!(t, "0" | "1");
        if idx == 0 && !record.iter().all(binary) {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != n + tasks {
            return Err(Error::FormatLine {
                line,
                message: format!("expected {} fields ({n} challenge + {tasks} response), found {}", n + tasks, record.len()),
            });
        }
        for (j, tok) in record.iter().enumerate() {
            row[j] = match tok {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::FormatLine {
                        line,
                        message: format!("field {} is '{other}', expected 0 or 1", j + 1),
                    })
                }
            };
        }
        set.push(&row[..n], &row[n..])?;
    }
    Ok(set)
}

fn csv_io(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::FormatLine { line, message: format!("{other:?}") },
    }
}

pub fn export_csv(set: &CrpSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let header: Vec<String> = (1..=set.n)
        .map(|i| format!("c{i}"))
        .chain((1..=set.tasks).map(|t| format!("r{t}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..set.len() {
        let fields: Vec<&str> = set
            .challenge(i)
            .bits()
            .iter()
            .chain(set.responses(i).iter())
            .map(|&b| if b == 1 { "1" } else { "0" })
            .collect();
        w.write_record(&fields).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(bits: &[u8]) -> Challenge {
        Challenge::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(transform_challenge(&ch(&[0, 0, 0])).0, vec![1.0, 1.0, 1.0]);
        assert_eq!(transform_challenge(&ch(&[0, 1, 0])).0, vec![-1.0, -1.0, 1.0]);
        let a = transform_challenge(&ch(&[1, 0, 1, 1, 0]));
        let b = transform_challenge(&ch(&[1, 0, 1, 1, 1]));
        assert!(a.0.iter().zip(&b.0).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn challenge_rejects_non_bits() {
        assert!(Challenge::new(vec![0, 2]).is_err());
    }

    fn small_set() -> CrpSet {
        let specs = vec![
            PufSpec::parse("xor:2", 12, 1).unwrap(),
            PufSpec::parse("apuf", 12, 2).unwrap(),
        ];
        generate_crps(&specs, 3, 500).unwrap()
    }

    #[test]
    fn generation_shapes_and_determinism() {
        let a = small_set();
        assert_eq!((a.len(), a.n(), a.tasks()), (500, 12, 2));
        assert_eq!(encode_crpb(&a), encode_crpb(&small_set()));
        assert_eq!(a.meta.specs, vec!["xor:2", "apuf"]);
    }

    #[test]
    fn challenge_stream_ignores_attached_specs() {
        let a = generate_crps(&[PufSpec::parse("apuf", 12, 1).unwrap()], 9, 100).unwrap();
        let b = generate_crps(
            &[PufSpec::parse("ipuf:2,2", 12, 5).unwrap(), PufSpec::parse("xor:3", 12, 6).unwrap()],
            9,
            100,
        )
        .unwrap();
        for i in 0..100 {
            assert_eq!(a.challenge(i), b.challenge(i));
        }
    }

    #[test]
    fn same_puf_twice_gives_equal_columns() {
        let s = PufSpec::parse("xor:2", 16, 77).unwrap();
        let set = generate_crps(&[s.clone(), s], 1, 300).unwrap();
        assert!((0..set.len()).all(|i| set.response(i, 0) == set.response(i, 1)));
    }

    #[test]
    fn mismatched_stage_counts_are_rejected() {
        let specs = [PufSpec::parse("apuf", 12, 1).unwrap(), PufSpec::parse("apuf", 13, 1).unwrap()];
        assert!(matches!(generate_crps(&specs, 1, 10), Err(Error::InvalidArgument(_))));
        assert!(generate_crps(&specs[..1], 1, 0).is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let set = generate_crps(&[PufSpec::parse("apuf", 64, 1).unwrap()], 2, 10_000).unwrap();
        let (a, b) = split(&set, 0.8, 4).unwrap();
        assert_eq!((a.len(), b.len()), (8000, 2000));
        let left: HashSet<Vec<u8>> = (0..a.len()).map(|i| a.challenge_bytes(i).to_vec()).collect();
        assert!((0..b.len()).all(|i| !left.contains(b.challenge_bytes(i))));
        let (a2, _) = split(&set, 0.8, 4).unwrap();
        assert_eq!(a, a2);
        let (a3, _) = split(&set, 0.8, 5).unwrap();
        assert_ne!(a, a3);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(split(&set, bad, 1).is_err());
        }
    }

    #[test]
    fn split_keeps_duplicate_challenges_together() {
        // n = 3 has only 8 distinct challenges, so duplicates are certain.
        let set = generate_crps(&[PufSpec::parse("apuf", 3, 1).unwrap()], 2, 200).unwrap();
        let (a, b) = split(&set, 0.5, 1).unwrap();
        assert_eq!(a.len() + b.len(), 200);
        let left: HashSet<Vec<u8>> = (0..a.len()).map(|i| a.challenge_bytes(i).to_vec()).collect();
        assert!((0..b.len()).all(|i| !left.contains(b.challenge_bytes(i))));
    }

    #[test]
    fn crpb_round_trip_and_size() {
        let set = small_set();
        let bytes = encode_crpb(&set);
        assert_eq!(bytes.len(), CRPB_HEADER_LEN + 500 * (2 + 1));
        let back = decode_crpb(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode_crpb(&back), bytes);
    }

    #[test]
    fn crpb_rejects_damage() {
        let bytes = encode_crpb(&small_set());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_crpb(&bad), Err(Error::Format { offset: 0, .. })));
        let mut ver = bytes.clone();
        ver[4] = 2;
        assert!(matches!(decode_crpb(&ver), Err(Error::Format { offset: 4, .. })));
        match decode_crpb(&bytes[..bytes.len() - 1]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, CRPB_HEADER_LEN + 499 * 3),
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(decode_crpb(&bytes[..10]).is_err());
        let mut pad = bytes;
        // n = 12: the high nibble of the second challenge byte is padding
        pad[CRPB_HEADER_LEN + 1] |= 0x80;
        assert!(decode_crpb(&pad).is_err());
    }

    #[test]
    fn bit_packing_is_lsb_first() {
        let mut set = CrpSet::new(10, 1, CrpMeta::with_origin(Origin::External)).unwrap();
        set.push(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 1], &[1]).unwrap();
        let bytes = encode_crpb(&set);
        assert_eq!(&bytes[CRPB_HEADER_LEN..], &[0b0000_0001, 0b0000_0010, 0b0000_0001]);
    }

    #[test]
    fn holdout_is_disjoint_and_checks_counts() {
        let set = generate_crps(&[PufSpec::parse("apuf", 4, 1).unwrap()], 2, 100).unwrap();
        // only 16 distinct challenges exist, so the remainder is mostly seen
        assert!(set.disjoint_holdout(50, 40).is_err());
        let set = small_set();
        let (tr, te) = set.disjoint_holdout(300, 150).unwrap();
        assert_eq!((tr.len(), te.len()), (300, 150));
        assert!(set.disjoint_holdout(400, 101).is_err());
    }

    #[test]
    fn features_match_transform() {
        let set = small_set();
        let x = set.features(&[3, 7]);
        assert_eq!(x.row(1), transform_challenge(&set.challenge(7)).0.as_slice());
        let y = set.labels(&[3]);
        assert_eq!(y.row(0), &[f64::from(set.response(3, 0)), f64::from(set.response(3, 1))]);
    }
}
