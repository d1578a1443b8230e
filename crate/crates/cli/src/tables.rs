//! Renders stored attack records as result tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use puf_moe::metrics::{markdown_table, median, AccuracyGrid};
use puf_moe::report::AttackReport;
use puf_moe::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Table {
    /// XOR targets: Method | k | crp | time | acc.
    #[value(name = "II")]
    Xor,
    /// Feed-forward and interpose targets.
    #[value(name = "III")]
    FfIpuf,
    /// Multi-task runs, one row per run.
    #[value(name = "V")]
    Multi,
    /// Target by model grid.
    #[value(name = "cross")]
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Md,
    Csv,
}

pub fn load_records(paths: &[impl AsRef<Path>]) -> Result<Vec<AttackReport>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = fs::read_to_string(p).with_context(|| format!("reading records {}", p.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r = AttackReport::from_record(line).map_err(|e| Error::FormatLine {
                line: i + 1,
                message: format!("{}: {e}", p.display()),
            })?;
            out.push(r);
        }
    }
    Ok(out)
}

/// Experiment ids from `required` that no record carries.
pub fn missing_ids(records: &[AttackReport], required: &[String]) -> Vec<String> {
    required
        .iter()
        .filter(|id| !records.iter().any(|r| tag(r, "experiment").as_deref() == Some(id.as_str())))
        .cloned()
        .collect()
}

fn tag(r: &AttackReport, key: &str) -> Option<String> {
    r.tags.get(key).map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_owned))
}

fn target(r: &AttackReport) -> String {
    tag(r, "target").unwrap_or_else(|| "?".into())
}

fn method(r: &AttackReport) -> String {
    match r.config.get("k").and_then(|k| k.as_u64()) {
        Some(k) => format!("{}:{k}", r.attack),
        None => r.attack.clone(),
    }
}

pub fn format_time(secs: f64) -> String {
    if secs < 120.0 {
        format!("{secs:.1}s")
    } else if secs < 7200.0 {
        format!("{:.1}min", secs / 60.0)
    } else {
        format!("{:.1}h", secs / 3600.0)
    }
}

fn crp(count: usize) -> String {
    if count >= 1_000_000 && count.is_multiple_of(100_000) {
        format!("{}M", count as f64 / 1e6)
    } else if count >= 1000 && count.is_multiple_of(1000) {
        format!("{}k", count / 1000)
    } else {
        count.to_string()
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Groups single-task records by (method, target, crp) and reports the
/// median accuracy and the slowest run.
fn single_rows(records: &[AttackReport], keep: impl Fn(&str) -> bool) -> Vec<(String, String, usize, f64, f64)> {
    let mut groups: BTreeMap<(String, String, usize), (Vec<f64>, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.task.is_none() && !matches!(r.attack.as_str(), "mmope" | "share-bottom")) {
        let t = target(r);
        if !keep(&t) {
            continue;
        }
        let Some(acc) = r.accuracy else { continue };
        let e = groups.entry((method(r), t, r.train_crps)).or_default();
        e.0.push(acc);
        e.1 = e.1.max(r.wall_time_secs);
    }
    groups.into_iter().map(|((m, t, c), (accs, time))| (m, t, c, median(&accs), time)).collect()
}

pub fn render(records: &[AttackReport], table: Table, format: Format) -> String {
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match table {
        Table::Xor => (
            vec!["Method", "k", "crp", "time", "acc"],
            single_rows(records, |t| t.starts_with("xor:") || t == "apuf")
                .into_iter()
                .map(|(m, t, c, acc, time)| {
                    let k = t.strip_prefix("xor:").unwrap_or("1").to_owned();
                    vec![m, k, crp(c), format_time(time), pct(acc)]
                })
                .collect(),
        ),
        Table::FfIpuf => (
            vec!["Method", "Type", "crp", "time", "acc"],
            single_rows(records, |t| t.starts_with("ff:") || t.starts_with("ipuf:"))
                .into_iter()
                .map(|(m, t, c, acc, time)| vec![m, t, crp(c), format_time(time), pct(acc)])
                .collect(),
        ),
        Table::Multi => {
            let mut rows = Vec::new();
            let combined = records.iter().filter(|r| r.task.is_none() && matches!(r.attack.as_str(), "mmope" | "share-bottom"));
            for r in combined {
                let id = tag(r, "experiment");
                let per_task: Vec<String> = records
                    .iter()
                    .filter(|t| t.task.is_some() && t.attack == r.attack && tag(t, "experiment") == id && t.seed == r.seed)
                    .map(|t| t.accuracy.map_or("-".into(), pct))
                    .collect();
                rows.push(vec![
                    method(r),
                    target(r),
                    crp(r.train_crps),
                    per_task.join(" / "),
                    r.accuracy.map_or("-".into(), pct),
                    format_time(r.wall_time_secs),
                ]);
            }
            (vec!["Method", "PUFs", "crp", "task acc", "mean acc", "time"], rows)
        }
        Table::Cross => {
            let grid = cross_grid(records);
            return match format {
                Format::Md => grid.to_markdown(),
                Format::Csv => grid.to_csv(),
            };
        }
    };
    match format {
        Format::Md => markdown_table(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>(), &rows),
        Format::Csv => {
            let mut out = header.join(",") + "\n";
            for r in rows {
                out.push_str(&r.iter().map(|c| c.replace(',', ";")).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
            out
        }
    }
}

/// Targets as rows, methods as columns; cells hold every run's accuracy.
pub fn cross_grid(records: &[AttackReport]) -> AccuracyGrid {
    let mut targets: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    let singles: Vec<&AttackReport> = records.iter().filter(|r| r.task.is_none() && r.accuracy.is_some()).collect();
    for r in &singles {
        let (t, m) = (target(r), method(r));
        if !targets.contains(&t) {
            targets.push(t);
        }
        if !models.contains(&m) {
            models.push(m);
        }
    }
    let cells = targets
        .iter()
        .map(|t| {
            models
                .iter()
                .map(|m| {
                    singles.iter().filter(|r| &target(r) == t && &method(r) == m).filter_map(|r| r.accuracy).collect()
                })
                .collect()
        })
        .collect();
    AccuracyGrid { targets, models, cells }
}
