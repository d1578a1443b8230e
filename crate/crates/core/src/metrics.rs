//! Attack-success arithmetic, the CRP-budget search and the
//! model-by-target accuracy grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Chance of guessing every bit of a `bits`-bit identifier when each bit is
/// predicted independently with accuracy `p`.
pub fn collision_probability(p: f64, bits: u32) -> f64 {
    p.powi(bits as i32)
}

/// Collision probability an attacker must reach for sizes outside the table.
const COLLISION_TARGET: f64 = 1e-6;

const THRESHOLDS: [(u32, f64); 4] = [(64, 0.80), (128, 0.90), (256, 0.95), (512, 0.98)];

/// Per-bit accuracy an attacker needs against a `bits`-bit identifier.
///
/// Tabulated for 64, 128, 256 and 512 bits. Other sizes take the smallest
/// three-decimal `p` with `p^bits >= 1e-6`, clamped between the neighbouring
/// table entries so the result never decreases with `bits`.
pub fn viability_threshold(bits: u32) -> Result<f64> {
    if bits == 0 {
        return invalid("identifier must have at least one bit");
    }
    if let Some(&(_, p)) = THRESHOLDS.iter().find(|(b, _)| *b == bits) {
        return Ok(p);
    }
    let mut milli = 501u32;
    while collision_probability(f64::from(milli) / 1000.0, bits) < COLLISION_TARGET {
        milli += 1;
    }
    let raw = f64::from(milli) / 1000.0;
    let lower = THRESHOLDS.iter().rev().find(|(b, _)| *b < bits).map_or(0.501, |t| t.1);
    let upper = THRESHOLDS.iter().find(|(b, _)| *b > bits).map_or(1.0, |t| t.1);
    Ok(raw.clamp(lower, upper))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViabilityPolicy {
    pub bits: u32,
    pub required_accuracy: f64,
}

impl ViabilityPolicy {
    pub fn for_bits(bits: u32) -> Result<Self> {
        Ok(Self { bits, required_accuracy: viability_threshold(bits)? })
    }

    pub fn new(bits: u32, required_accuracy: f64) -> Result<Self> {
        if !(required_accuracy > 0.5 && required_accuracy <= 1.0) {
            return invalid(format!("required accuracy {required_accuracy} outside (0.5, 1]"));
        }
        Ok(Self { bits, required_accuracy })
    }

    pub fn is_met(&self, accuracy: f64) -> bool {
        accuracy >= self.required_accuracy
    }
}

/// One probed training-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchLevel {
    pub count: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub minimal_count: usize,
    pub ledger: Vec<SearchLevel>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub start: usize,
    pub target: f64,
    /// Independent runs per level; all must reach `target`.
    pub runs_per_level: usize,
    /// Largest count the search may probe.
    pub cap: usize,
    /// Stop once `smallest_pass / largest_fail` is at most this.
    pub bracket_ratio: f64,
}

impl SearchConfig {
    pub fn new(start: usize, target: f64, runs_per_level: usize) -> Self {
        Self { start, target, runs_per_level, cap: 8_000_000, bracket_ratio: 1.5 }
    }
}

/// Searches for the smallest passing training-set size.
///
/// `attempt(count, run)` trains once on `count` CRPs and returns the seed it
/// used and the held-out accuracy. A level passes when all runs reach the
/// target. Failures double the count, passes move to the geometric midpoint
/// of the bracket (or halve while no failure is known).
pub fn crp_search(
    cfg: &SearchConfig,
    mut attempt: impl FnMut(usize, usize) -> Result<(u64, f64)>,
) -> Result<SearchResult> {
    if cfg.start == 0 || cfg.runs_per_level == 0 {
        return invalid("start count and runs per level must be positive");
    }
    if !(cfg.bracket_ratio > 1.0) {
        return invalid("bracket ratio must exceed 1");
    }
    let mut ledger: Vec<SearchLevel> = Vec::new();
    let mut best_pass: Option<usize> = None;
    let mut worst_fail: Option<usize> = None;
    let mut count = cfg.start;
    loop {
        if count > cfg.cap {
            return Err(Error::SearchExhausted {
                message: format!("no passing level up to the cap of {} CRPs", cfg.cap),
                levels: ledger.len(),
            });
        }
        let mut level = SearchLevel { count, seeds: Vec::new(), accuracies: Vec::new(), passed: true };
        for run in 0..cfg.runs_per_level {
            let (seed, acc) = attempt(count, run)?;
            level.seeds.push(seed);
            level.accuracies.push(acc);
            if acc < cfg.target {
                level.passed = false;
                break;
            }
        }
        let passed = level.passed;
        ledger.push(level);
        if passed {
            best_pass = Some(best_pass.map_or(count, |b| b.min(count)));
        } else {
            worst_fail = Some(worst_fail.map_or(count, |f| f.max(count)));
        }
        let next = match (best_pass, worst_fail) {
            (Some(p), Some(f)) => {
                if p as f64 <= f as f64 * cfg.bracket_ratio {
                    break;
                }
                ((p as f64 * f as f64).sqrt().round() as usize).clamp(f + 1, p - 1)
            }
            (Some(p), None) => {
                if p == 1 {
                    break;
                }
                p / 2
            }
            (None, Some(f)) => f.saturating_mul(2),
            (None, None) => unreachable!("a level was just recorded"),
        };
        if ledger.iter().any(|l| l.count == next) {
            break;
        }
        count = next;
    }
    Ok(SearchResult { minimal_count: best_pass.expect("loop exits only after a pass"), ledger })
}

/// Held-out accuracies, one row per target and one column per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGrid {
    pub targets: Vec<String>,
    pub models: Vec<String>,
    /// `cells[target][model]` holds one accuracy per seed.
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl AccuracyGrid {
    pub fn median(&self, target: usize, model: usize) -> f64 {
        median(&self.cells[target][model])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for m in &self.models {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for (ti, t) in self.targets.iter().enumerate() {
            out.push_str(t);
            for mi in 0..self.models.len() {
                write!(out, ",{:.4}", self.median(ti, mi)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Median accuracy in percent, aligned columns.
    pub fn to_markdown(&self) -> String {
        let mut header = vec!["target".to_owned()];
        header.extend(self.models.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .targets
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let mut r = vec![t.clone()];
                r.extend((0..self.models.len()).map(|mi| format!("{:.1}", 100.0 * self.median(ti, mi))));
                r
            })
            .collect();
        markdown_table(&header, &rows)
    }
}

/// Fills a grid by calling `cell(target, model)` for every pair.
pub fn cross_matrix(
    targets: &[String],
    models: &[String],
    mut cell: impl FnMut(usize, usize) -> Result<Vec<f64>>,
) -> Result<AccuracyGrid> {
    let mut cells = Vec::with_capacity(targets.len());
    for ti in 0..targets.len() {
        let row = (0..models.len()).map(|mi| cell(ti, mi)).collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(AccuracyGrid { targets: targets.to_vec(), models: models.to_vec(), cells })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Markdown table with columns padded to equal width.
pub fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len().max(3)).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let body: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!(" {c:<w$} ")).collect();
        format!("|{}|\n", body.join("|"))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(w + 2)).collect();
    out.push_str(&format!("|{}|\n", rule.join("|")));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}
