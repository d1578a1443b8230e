//! `pufmoe`: simulate PUFs, attack CRP files and render result tables.

mod manifest;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use puf_moe::baselines::train_share_bottom;
use puf_moe::dataset::{export_csv, generate_crps, import_csv, load_crps, save_crps, CrpSet};
use puf_moe::experiment::{run_attack, simulate_and_attack, AttackKind};
use puf_moe::metrics::{crp_search, cross_matrix, markdown_table, SearchConfig};
use puf_moe::mmope::{attach_accuracies, evaluate_tasks, train_mmope, MmopeConfig};
use puf_moe::mope::MopeConfig;
use puf_moe::nn::checkpoint;
use puf_moe::puf::{PufKind, PufSpec};
use puf_moe::report::AttackReport;
use puf_moe::seed;
use puf_moe::training;
use puf_moe::Error;

use manifest::{append_record, manifest_path, RunManifest};
use tables::{Format, Table};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "pufmoe", version, about = "PUF simulation and generic modelling attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate PUFs and write their CRPs (CRPB, or CSV for a .csv path).
    Gen(GenArgs),
    /// Train one single-target attack and score it on held-out rows.
    Attack(AttackArgs),
    /// Jointly model every response column of a multi-column file.
    AttackMulti(MultiArgs),
    /// Find the smallest training-set size that reaches a target accuracy.
    Search(SearchArgs),
    /// Accuracy of several attacks on several simulated targets.
    Xcheck(XcheckArgs),
    /// Render stored records as a table.
    Report(ReportArgs),
    /// Re-run the command stored in a manifest and compare output digests.
    Replay(ReplayArgs),
}

/// Error raised for bad flag combinations; exits with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    /// PUF specs, comma separated or repeated: apuf, xor:K, ff:K-L:homo|hetero, ipuf:X,Y.
    #[arg(long = "spec", required = true)]
    specs: Vec<String>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    puf_seed: u64,
    #[arg(long, default_value_t = 0)]
    challenge_seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Training overrides shared by the attack commands.
#[derive(Args, Debug, Clone, Serialize)]
struct TrainOverrides {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    batch_cap: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, seed_value: u64) -> MopeConfig {
        let mut cfg = MopeConfig::default().with_seed(seed_value);
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.experts {
            cfg.num_experts = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.train.validation_fraction = v;
        }
        if let Some(v) = self.batch_cap {
            cfg.train.batch_cap = v;
        }
        cfg
    }
}

#[derive(Args, Debug, Serialize)]
struct InputArgs {
    /// CRPB file, or CSV (needs --csv-n).
    #[arg(long = "in")]
    input: PathBuf,
    /// Stage count for CSV input.
    #[arg(long = "csv-n")]
    csv_n: Option<usize>,
    /// Response columns for CSV input.
    #[arg(long = "csv-tasks", default_value_t = 1)]
    csv_tasks: usize,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    test: usize,
}

impl InputArgs {
    fn load(&self) -> Result<CrpSet> {
        if self.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let Some(n) = self.csv_n else { return usage("CSV input needs --csv-n") };
            Ok(import_csv(&self.input, n, self.csv_tasks)?)
        } else {
            Ok(load_crps(&self.input)?)
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    /// Append the record lines to this file.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Experiment id stored with each record.
    #[arg(long)]
    id: Option<String>,
    /// Target name stored with each record (defaults to the input file stem).
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AttackArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "mope")]
    attack: String,
    /// XOR size the structure-aware baselines are built for.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct MultiArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train the shared-bottom MLP sized for this XOR size instead.
    #[arg(long)]
    share_bottom: Option<usize>,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct SearchArgs {
    #[arg(long)]
    spec: String,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long)]
    start: usize,
    #[arg(long)]
    target: f64,
    #[arg(long, default_value = "mope")]
    attack: String,
    #[arg(long)]
    k: Option<usize>,
    /// Fresh PUF instances per level; all must pass.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 8_000_000)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ledger CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug, Serialize)]
struct XcheckArgs {
    /// Targets as spec@count (default: the standard suite).
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Attacks: mope, lr:K, mursi:K (default: mope, lr:2, mursi:2, mursi:5).
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies every training budget.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Grid CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "records", required = true)]
    records: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "II")]
    table: Table,
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
    /// Experiment ids that must be present.
    #[arg(long, value_delimiter = ',')]
    require: Vec<String>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
}

const DEFAULT_SUITE: [(&str, usize); 6] = [
    ("xor:2", 8_000),
    ("xor:3", 24_000),
    ("xor:4", 80_000),
    ("xor:5", 240_000),
    ("ff:1-1:homo", 20_000),
    ("ipuf:1,5", 480_000),
];

const DEFAULT_MODELS: [&str; 4] = ["mope", "lr:2", "mursi:2", "mursi:5"];

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match dispatch(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => 2,
        Some(Error::Format { .. } | Error::FormatLine { .. }) => 3,
        Some(Error::TrainingDiverged(_)) => 4,
        Some(Error::SearchExhausted { .. }) => 5,
        _ => 1,
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, argv),
        Command::Attack(a) => cmd_attack(&a, argv),
        Command::AttackMulti(a) => cmd_attack_multi(&a, argv),
        Command::Search(a) => cmd_search(&a, argv),
        Command::Xcheck(a) => cmd_xcheck(&a, argv),
        Command::Report(a) => cmd_report(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}

/// Splits comma lists while keeping `ipuf:X,Y` together.
fn split_specs(raw: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in raw.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|t| !t.is_empty()) {
        match out.last_mut() {
            Some(prev) if prev.starts_with("ipuf:") && !prev.contains(',') && token.parse::<usize>().is_ok() => {
                prev.push(',');
                prev.push_str(token);
            }
            _ => out.push(token.to_owned()),
        }
    }
    out
}

fn cmd_gen(a: &GenArgs, argv: &[String]) -> Result<()> {
    let tokens = split_specs(&a.specs);
    let specs = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let kind: PufKind = t.parse().map_err(|_| Usage(format!("unparsable PUF spec '{t}'")))?;
            Ok(PufSpec::new(kind, a.n, seed::derive(a.puf_seed, seed::STREAM_SPEC, i as u64))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = generate_crps(&specs, a.challenge_seed, a.count)?;
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        export_csv(&set, &a.out)?;
    } else {
        save_crps(&set, &a.out)?;
    }
    let m = RunManifest::new("gen", argv, a)
        .seed("puf_seed", a.puf_seed)
        .seed("challenge_seed", a.challenge_seed)
        .output(&a.out)?;
    if let Some(p) = manifest_path(a.manifest.as_deref(), Some(&a.out)) {
        m.write(&p)?;
    }
    println!("wrote {} rows x {} columns to {}", set.len(), set.tasks(), a.out.display());
    Ok(())
}

fn split_input(input: &InputArgs) -> Result<(CrpSet, CrpSet)> {
    let set = input.load()?;
    if input.train == 0 || input.test == 0 {
        return usage("--train and --test must be positive");
    }
    if input.train + input.test > set.len() {
        return usage(format!(
            "--train {} + --test {} exceeds the {} rows of {}",
            input.train,
            input.test,
            set.len(),
            input.input.display()
        ));
    }
    Ok(set.disjoint_holdout(input.train, input.test)?)
}

fn label(out: &OutputArgs, input: &Path) -> String {
    out.label.clone().unwrap_or_else(|| input.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned()))
}

fn finish_records(reports: Vec<AttackReport>, out: &OutputArgs, input: &Path, default_id: String) -> Result<()> {
    let id = out.id.clone().unwrap_or(default_id);
    let target = label(out, input);
    for r in reports {
        let line = r.tag("experiment", id.clone()).tag("target", target.clone()).to_record();
        println!("{line}");
        if let Some(p) = &out.records {
            append_record(p, &line)?;
        }
    }
    Ok(())
}

fn write_manifest(m: RunManifest, out: &OutputArgs) -> Result<()> {
    let primary = out.save_model.as_deref().or(out.records.as_deref());
    if let Some(p) = manifest_path(out.manifest.as_deref(), primary) {
        m.write(&p)?;
    }
    Ok(())
}

fn cmd_attack(a: &AttackArgs, argv: &[String]) -> Result<()> {
    let attack = parse_attack(&a.attack, a.k)?;
    let (train, test) = split_input(&a.input)?;
    if train.tasks() != 1 {
        return usage(format!("{} has {} response columns; use attack-multi", a.input.input.display(), train.tasks()));
    }
    let cfg = a.overrides.apply(a.seed);
    let (model, report) = run_attack(attack, &train, &test, &cfg)?;
    if let Some(p) = &a.output.save_model {
        checkpoint::save(p, &model.to_blob())?;
    }
    let id = format!("{attack}-{}-{}", a.input.train, a.seed);
    finish_records(vec![report], &a.output, &a.input.input, id)?;
    let mut m = RunManifest::new("attack", argv, a).seed("seed", a.seed).input(&a.input.input)?;
    if let Some(p) = &a.output.save_model {
        m = m.output(p)?;
    }
    write_manifest(m.record_file(a.output.records.as_deref()), &a.output)
}

fn cmd_attack_multi(a: &MultiArgs, argv: &[String]) -> Result<()> {
    let (train, test) = split_input(&a.input)?;
    if train.tasks() < 2 {
        return usage(format!("attack-multi needs at least 2 response columns, {} has 1", a.input.input.display()));
    }
    let cfg = a.overrides.apply(a.seed);
    let (blob, reports) = match a.share_bottom {
        None => {
            let mcfg = MmopeConfig::from_mope(train.tasks(), &cfg);
            let (net, reports) = train_mmope(&train.payload_only(), &mcfg)?;
            let acc = evaluate_tasks(&net, &test.payload_only());
            (net.to_blob(), attach_accuracies(reports, &acc, test.len()))
        }
        Some(k) => {
            let (net, reports) = train_share_bottom(&train, k, &cfg.train, None)?;
            let acc = training::accuracy(&net, &test);
            (net.to_blob(), attach_accuracies(reports, &acc, test.len()))
        }
    };
    if let Some(p) = &a.output.save_model {
        checkpoint::save(p, &blob)?;
    }
    let method = a.share_bottom.map_or("mmope".to_owned(), |k| format!("share-bottom:{k}"));
    finish_records(reports, &a.output, &a.input.input, format!("{method}-{}-{}", a.input.train, a.seed))?;
    let mut m = RunManifest::new("attack-multi", argv, a).seed("seed", a.seed).input(&a.input.input)?;
    if let Some(p) = &a.output.save_model {
        m = m.output(p)?;
    }
    write_manifest(m.record_file(a.output.records.as_deref()), &a.output)
}

fn parse_attack(name: &str, k: Option<usize>) -> Result<AttackKind> {
    AttackKind::from_parts(name, k).or_else(|e| usage(e.to_string()))
}

fn cmd_search(a: &SearchArgs, argv: &[String]) -> Result<()> {
    let attack = parse_attack(&a.attack, a.k)?;
    let kind: PufKind = a.spec.parse().map_err(|_| Usage(format!("unparsable PUF spec '{}'", a.spec)))?;
    let cfg = a.overrides.apply(a.seed);
    let mut search = SearchConfig::new(a.start, a.target, a.runs);
    search.cap = a.cap;
    let mut index = 0u64;
    let mut records = Vec::new();
    let result = crp_search(&search, |count, _| {
        let r = simulate_and_attack(&kind, a.n, count, attack, &cfg, a.seed, index)?;
        index += 1;
        let acc = r.accuracy.unwrap_or(0.0);
        eprintln!("  {count} CRPs: accuracy {acc:.4}");
        let seed = r.seed;
        records.push(r.tag("experiment", format!("search-{}-{}", a.spec, a.seed)));
        Ok((seed, acc))
    });
    if let Some(p) = &a.records {
        for r in &records {
            append_record(p, &r.to_record())?;
        }
    }
    let result = result?;
    let header: Vec<String> = ["count", "runs", "accuracies", "pass"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = result
        .ledger
        .iter()
        .map(|l| {
            let accs: Vec<String> = l.accuracies.iter().map(|v| format!("{v:.4}")).collect();
            vec![l.count.to_string(), l.seeds.len().to_string(), accs.join(" "), l.passed.to_string()]
        })
        .collect();
    print!("{}", markdown_table(&header, &rows));
    println!("minimal passing count: {}", result.minimal_count);
    if let Some(p) = &a.out {
        let mut csv = String::from("count,seeds,accuracies,passed\n");
        for l in &result.ledger {
            let seeds: Vec<String> = l.seeds.iter().map(u64::to_string).collect();
            let accs: Vec<String> = l.accuracies.iter().map(|v| format!("{v:.6}")).collect();
            csv.push_str(&format!("{},{},{},{}\n", l.count, seeds.join(" "), accs.join(" "), l.passed));
        }
        std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let m = RunManifest::new("search", argv, a).seed("seed", a.seed).record_file(a.records.as_deref());
    let m = match &a.out {
        Some(p) => m.output(p)?,
        None => m,
    };
    if let Some(p) = manifest_path(None, a.out.as_deref()) {
        m.write(&p)?;
    }
    Ok(())
}

fn cmd_xcheck(a: &XcheckArgs, argv: &[String]) -> Result<()> {
    let targets: Vec<(PufKind, usize, String)> = if a.targets.is_empty() {
        DEFAULT_SUITE.iter().map(|(s, c)| (s.parse().expect("suite parses"), *c, s.to_string())).collect()
    } else {
        a.targets
            .iter()
            .map(|t| {
                let (spec, count) = t.rsplit_once('@').ok_or_else(|| Usage(format!("target '{t}' must be spec@count")))?;
                let kind: PufKind = spec.parse().map_err(|_| Usage(format!("unparsable PUF spec '{spec}'")))?;
                let count: usize = count.parse().map_err(|_| Usage(format!("bad count in '{t}'")))?;
                Ok((kind, count, spec.to_owned()))
            })
            .collect::<Result<_>>()?
    };
    let model_names: Vec<String> =
        if a.models.is_empty() { DEFAULT_MODELS.iter().map(|s| s.to_string()).collect() } else { a.models.clone() };
    let models = model_names.iter().map(|m| m.parse::<AttackKind>().or_else(|e| usage(e.to_string()))).collect::<Result<Vec<_>>>()?;
    let cfg = a.overrides.apply(a.seed);
    let names: Vec<String> = targets.iter().map(|t| t.2.clone()).collect();
    let mut records = Vec::new();
    let grid = cross_matrix(&names, &model_names, |ti, mi| {
        let (kind, count, _) = &targets[ti];
        let count = ((*count as f64) * a.scale).round().max(1.0) as usize;
        let mut accs = Vec::new();
        for s in 0..a.seeds {
            // The same instances face every model.
            let index = (ti as u64) * 1000 + s;
            let r = simulate_and_attack(kind, a.n, count, models[mi], &cfg, a.seed, index)?;
            eprintln!("  {} on {} ({count} CRPs): {:.4}", models[mi], kind, r.accuracy.unwrap_or(f64::NAN));
            accs.push(r.accuracy.unwrap_or(f64::NAN));
            records.push(r.tag("experiment", format!("xcheck-{}", a.seed)));
        }
        Ok(accs)
    })?;
    print!("{}", grid.to_markdown());
    if let Some(p) = &a.records {
        for r in &records {
            append_record(p, &r.to_record())?;
        }
    }
    let mut m = RunManifest::new("xcheck", argv, a).seed("seed", a.seed).record_file(a.records.as_deref());
    if let Some(p) = &a.out {
        std::fs::write(p, grid.to_csv()).with_context(|| format!("writing {}", p.display()))?;
        m = m.output(p)?;
        if let Some(mp) = manifest_path(None, Some(p)) {
            m.write(&mp)?;
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let records = tables::load_records(&a.records)?;
    let missing = tables::missing_ids(&records, &a.require);
    if !missing.is_empty() {
        bail!(Error::InvalidArgument(format!("no records for experiment ids: {}", missing.join(", "))));
    }
    print!("{}", tables::render(&records, a.table, a.format));
    Ok(())
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let old = RunManifest::read(&a.manifest)?;
    let mut args = vec!["pufmoe".to_owned()];
    args.extend(old.argv.iter().cloned());
    let cli = Cli::try_parse_from(&args).map_err(|e| Usage(format!("stored arguments no longer parse: {e}")))?;
    dispatch(cli.command, &old.argv)?;
    let mut mismatched = Vec::new();
    for f in &old.outputs {
        let now = manifest::sha256_file(&f.path)?;
        if now != f.sha256 {
            mismatched.push(f.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        bail!("outputs differ from the manifest: {}", mismatched.join(", "));
    }
    println!("replayed {}: {} output digest(s) identical", old.subcommand, old.outputs.len());
    Ok(())
}
