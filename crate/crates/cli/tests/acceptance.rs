//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Stochastic criteria run up to five fixed seeds and stop as soon as the
//! verdict is decided. Criterion 3 runs only with `PUFMOE_SLOW=1`;
//! `PUFMOE_CRITERIA=1,8` restricts the run to the listed criteria.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use puf_moe::baselines::train_share_bottom;
use puf_moe::dataset::{decode_crpb, encode_crpb, generate_crps, transform_challenge, Challenge, CRPB_HEADER_LEN};
use puf_moe::experiment::{simulate_and_attack, simulate_many, AttackKind, TEST_CRPS};
use puf_moe::metrics::collision_probability;
use puf_moe::mmope::{evaluate_tasks, train_mmope, train_mmope_limited, MmopeConfig};
use puf_moe::mope::{build_mope, train_mope, MopeConfig};
use puf_moe::nn::{bce_loss, grad_check, softmax, sparse_softmax, Matrix};
use puf_moe::puf::{ArbiterChain, PufKind, PufSpec};
use puf_moe::seed;
use puf_moe::training::{self, batch_size, LabelLimits, TrainConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const N: usize = 64;
const SEEDS: u64 = 5;
const BASE_SEED: u64 = 2024;

// Bars.
const C1_ACC: f64 = 0.92;
const C1_SECS: f64 = 120.0;
const C2_BARS: [(&str, usize, f64); 3] = [("xor:3", 24_000, 0.93), ("xor:4", 80_000, 0.95), ("xor:5", 240_000, 0.95)];
const C3_BARS: [(&str, usize, f64); 2] = [("xor:6", 800_000, 0.93), ("xor:7", 2_400_000, 0.95)];
const C3_SECS: f64 = 1800.0;
const C4_BARS: [(&str, usize, f64); 3] =
    [("ff:1-1:homo", 20_000, 0.92), ("ff:2-1:hetero", 160_000, 0.95), ("ipuf:3,3", 320_000, 0.95)];
const C5_TARGETS: [(&str, usize); 6] = [
    ("xor:2", 8_000),
    ("xor:3", 24_000),
    ("xor:4", 80_000),
    ("xor:5", 240_000),
    ("ff:1-1:homo", 20_000),
    ("ipuf:1,5", 480_000),
];
const C5_ACC: f64 = 0.90;
const C5_MURSI_BUDGET: usize = 800_000;
const C5_MURSI_MAX: f64 = 0.60;
const C6_BUDGET: usize = 80_000;
const C6_MEAN_ACC: f64 = 0.92;
const C6_TIME_RATIO: f64 = 1.6;
const C6_SB_BUDGET: usize = 400_000;
const C6_SB_MAX: f64 = 0.80;
const C7_MIX: [(&str, usize); 5] =
    [("xor:3", 24_000), ("xor:3", 24_000), ("xor:4", 80_000), ("xor:4", 80_000), ("ipuf:1,5", 480_000)];
const C7_ACC: f64 = 0.90;
const C7_SECS: f64 = 1800.0;
const GRAD_TOL: f64 = 1e-4;
const SOFTMAX_CASES: usize = 1000;
const COLLISION_REL: f64 = 0.02;
const BCE_TOL: f64 = 1e-12;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Runs seeds in order until `need` of `SEEDS` succeed or that is out of
/// reach. Returns the verdict and one note per run.
fn majority(need: usize, mut run: impl FnMut(u64) -> (bool, String)) -> (bool, Vec<String>) {
    let (mut ok, mut notes) = (0, Vec::new());
    for s in 0..SEEDS {
        let (pass, note) = run(s);
        ok += usize::from(pass);
        notes.push(format!("{}{}", note, if pass { "" } else { "*" }));
        let left = (SEEDS - s - 1) as usize;
        if ok >= need || ok + left < need {
            break;
        }
    }
    (ok >= need, notes)
}

#[derive(Clone)]
struct Run {
    accuracy: f64,
    secs: f64,
}

/// Single-target runs shared between criteria.
#[derive(Default)]
struct Runs {
    cache: HashMap<(String, usize, String, u64), Run>,
}

impl Runs {
    fn get(&mut self, spec: &str, budget: usize, attack: AttackKind, s: u64) -> Run {
        let key = (spec.to_owned(), budget, attack.to_string(), s);
        if let Some(r) = self.cache.get(&key) {
            return r.clone();
        }
        let kind: PufKind = spec.parse().expect("valid spec");
        let t = Instant::now();
        let run = match simulate_and_attack(&kind, N, budget, attack, &MopeConfig::default(), BASE_SEED, s) {
            Ok(r) => Run { accuracy: r.accuracy.unwrap_or(f64::NAN), secs: t.elapsed().as_secs_f64() },
            Err(e) => {
                eprintln!("    run failed: {e}");
                Run { accuracy: f64::NAN, secs: t.elapsed().as_secs_f64() }
            }
        };
        eprintln!("    {attack} {spec} {budget} seed {s}: acc {:.4} in {:.1}s", run.accuracy, run.secs);
        self.cache.insert(key, run.clone());
        run
    }
}

fn note(r: &Run) -> String {
    format!("{:.4}/{:.0}s", r.accuracy, r.secs)
}

fn bar_group(runs: &mut Runs, bars: &[(&str, usize, f64)], max_secs: Option<f64>) -> (bool, String) {
    let mut all = true;
    let mut parts = Vec::new();
    for &(spec, budget, bar) in bars {
        let (ok, notes) = majority(4, |s| {
            let r = runs.get(spec, budget, AttackKind::Mope, s);
            (r.accuracy >= bar && max_secs.is_none_or(|m| r.secs < m), note(&r))
        });
        all &= ok;
        parts.push(format!("{spec}@{budget} >= {bar}: [{}]", notes.join(" ")));
    }
    (all, parts.join("; "))
}

fn verdict(pass: bool, detail: String) -> Verdict {
    if pass {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_1(runs: &mut Runs) -> Verdict {
    let (ok, notes) = majority(4, |s| {
        let r = runs.get("xor:2", 8_000, AttackKind::Mope, s);
        (r.accuracy >= C1_ACC && r.secs < C1_SECS, note(&r))
    });
    verdict(ok, format!("2-XOR 8k >= {C1_ACC} and < {C1_SECS}s in 4/5: [{}]", notes.join(" ")))
}

fn criterion_2(runs: &mut Runs) -> Verdict {
    let (ok, d) = bar_group(runs, &C2_BARS, None);
    verdict(ok, d)
}

fn criterion_3(runs: &mut Runs) -> Verdict {
    if std::env::var("PUFMOE_SLOW").as_deref() != Ok("1") {
        return Verdict::Skip("6-/7-XOR at 800k/2.4M; set PUFMOE_SLOW=1".into());
    }
    let (ok, d) = bar_group(runs, &C3_BARS, Some(C3_SECS));
    verdict(ok, d)
}

fn criterion_4(runs: &mut Runs) -> Verdict {
    let (ok, d) = bar_group(runs, &C4_BARS, None);
    verdict(ok, d)
}

fn criterion_5(runs: &mut Runs) -> Verdict {
    let bars: Vec<(&str, usize, f64)> = C5_TARGETS.iter().map(|&(s, b)| (s, b, C5_ACC)).collect();
    let (general, d) = bar_group(runs, &bars, None);
    let (mursi, notes) = majority(3, |s| {
        let r = runs.get("xor:6", C5_MURSI_BUDGET, AttackKind::Mursi { k: 2 }, s);
        (r.accuracy <= C5_MURSI_MAX, note(&r))
    });
    verdict(general && mursi, format!("{d}; mursi:2 on xor:6@{C5_MURSI_BUDGET} <= {C5_MURSI_MAX} in 3/5: [{}]", notes.join(" ")))
}

fn multi_set(specs: &[&str], index: u64, train: usize) -> (puf_moe::dataset::CrpSet, puf_moe::dataset::CrpSet) {
    let specs: Vec<PufSpec> = specs
        .iter()
        .enumerate()
        .map(|(j, s)| PufSpec::parse(s, N, seed::derive(BASE_SEED, seed::STREAM_SPEC, 1000 * index + j as u64)).unwrap())
        .collect();
    simulate_many(&specs, seed::derive(BASE_SEED, seed::STREAM_CHALLENGE, 1000 + index), train, TEST_CRPS).unwrap()
}

fn criterion_6() -> Verdict {
    let (acc_ok, acc_notes) = majority(4, |s| {
        let (tr, te) = multi_set(&["xor:4", "xor:4"], 10 + s, C6_BUDGET);
        let train_seed = seed::derive(BASE_SEED, seed::STREAM_INIT, 10 + s);
        let t = Instant::now();
        let Ok((net, _)) = train_mmope(&tr.payload_only(), &MmopeConfig::new(2).with_seed(train_seed)) else {
            return (false, "diverged".into());
        };
        let multi_secs = t.elapsed().as_secs_f64();
        let acc = evaluate_tasks(&net, &te.payload_only());
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        // Paired single-task run on the first column, same seed.
        let t = Instant::now();
        let single = train_mope(&tr.task(0).unwrap().payload_only(), &MopeConfig::default().with_seed(train_seed));
        let single_secs = t.elapsed().as_secs_f64();
        let ratio = multi_secs / single_secs;
        eprintln!("    mmope 2x xor:4 seed {s}: {acc:.4?} mean {mean:.4}, {multi_secs:.1}s vs single {single_secs:.1}s");
        let ok = single.is_ok() && mean >= C6_MEAN_ACC && ratio < C6_TIME_RATIO;
        (ok, format!("{mean:.4}/x{ratio:.2}"))
    });
    let (sb_ok, sb_notes) = majority(3, |s| {
        let (tr, te) = multi_set(&["xor:5", "xor:5"], 20 + s, C6_SB_BUDGET);
        let cfg = TrainConfig { seed: seed::derive(BASE_SEED, seed::STREAM_INIT, 20 + s), ..TrainConfig::default() };
        let Ok((m, _)) = train_share_bottom(&tr, 5, &cfg, None) else {
            return (true, "diverged".into());
        };
        let acc = training::accuracy(&m, &te);
        eprintln!("    share-bottom 2x xor:5 seed {s}: {acc:.4?}");
        let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
        (worst <= C6_SB_MAX, format!("{worst:.4}"))
    });
    verdict(
        acc_ok && sb_ok,
        format!(
            "mmope 2x xor:4@{C6_BUDGET} mean >= {C6_MEAN_ACC} and time < {C6_TIME_RATIO}x single in 4/5: [{}]; \
             share-bottom 2x xor:5@{C6_SB_BUDGET} worst task <= {C6_SB_MAX} in 3/5: [{}]",
            acc_notes.join(" "),
            sb_notes.join(" ")
        ),
    )
}

fn criterion_7() -> Verdict {
    let specs: Vec<&str> = C7_MIX.iter().map(|m| m.0).collect();
    let limits = LabelLimits(C7_MIX.iter().map(|m| m.1).collect());
    let rows = C7_MIX.iter().map(|m| m.1).max().unwrap();
    let (ok, notes) = majority(4, |s| {
        let (tr, te) = multi_set(&specs, 30 + s, rows);
        let cfg = MmopeConfig::new(C7_MIX.len()).with_seed(seed::derive(BASE_SEED, seed::STREAM_INIT, 30 + s));
        let t = Instant::now();
        let Ok((net, _)) = train_mmope_limited(&tr.payload_only(), &cfg, Some(&limits)) else {
            return (false, "diverged".into());
        };
        let secs = t.elapsed().as_secs_f64();
        let acc = evaluate_tasks(&net, &te.payload_only());
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        eprintln!("    mixed seed {s}: {acc:.4?} mean {mean:.4} in {secs:.0}s");
        (mean >= C7_ACC && secs < C7_SECS, format!("{mean:.4}/{secs:.0}s"))
    });
    verdict(ok, format!("K=16 mixed set mean >= {C7_ACC} and < {C7_SECS}s in 4/5: [{}]", notes.join(" ")))
}

fn bits(v: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((v >> i) & 1) as u8).collect()
}

fn criterion_8() -> Verdict {
    let mut bad = 0usize;
    for n in [4usize, 8, 10] {
        for s in 0..50u64 {
            let chain = ArbiterChain::new(n, 500 + 100 * n as u64 + s).unwrap();
            let (w, b) = chain.to_linear_weights();
            for v in 0..1usize << n {
                let c = bits(v, n);
                let x = transform_challenge(&Challenge::new(c.clone()).unwrap()).0;
                let lin = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + b;
                bad += usize::from(chain.eval(&c).unwrap().0 != u8::from(lin > 0.0));
            }
        }
    }
    let mut bad_xor = 0usize;
    for k in 1..=3usize {
        let inst = PufSpec::new(PufKind::XorApuf { k }, 8, 60 + k as u64).unwrap().instantiate().unwrap();
        for v in 0..256 {
            let c = bits(v, 8);
            let product: f64 = inst.chains().iter().map(|ch| -ch.delay(&c)).product();
            bad_xor += usize::from(1.0 - 2.0 * f64::from(inst.eval(&c).unwrap()) != product.signum());
        }
    }
    verdict(bad + bad_xor == 0, format!("linear-form mismatches {bad}, xor sign-product mismatches {bad_xor}"))
}

fn criterion_9() -> Verdict {
    let net = build_mope(N, &MopeConfig::default().with_seed(7)).unwrap();
    let mut rng = seed::rng(99);
    let rows = 32;
    let x = Matrix::from_vec(rows, N, (0..rows * N).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect());
    let y = Matrix::from_vec(rows, 1, (0..rows).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect());
    let g = grad_check(&net, &x, &y, None, 1e-5, 1e-6);
    let grad_ok = g.max_rel_error <= GRAD_TOL && g.checked > 10 * g.skipped;

    let mut violations = 0usize;
    for _ in 0..SOFTMAX_CASES {
        let k = rng.random_range(2..=16);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let tau = if rng.random::<bool>() { 1e-4 } else { rng.random_range(0.0..0.2) };
        let p = sparse_softmax(&z, tau);
        let sum: f64 = p.iter().sum();
        let arg = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        let ok = p.iter().all(|&v| v >= 0.0 && (v == 0.0 || v >= tau))
            && sum <= 1.0 + 1e-12
            && sum >= 1.0 - k as f64 * tau - 1e-12
            && arg(&p) == arg(&softmax(&z))
            && sparse_softmax(&z, 0.0) == softmax(&z);
        violations += usize::from(!ok);
    }
    verdict(
        grad_ok && violations == 0,
        format!(
            "full MoPE gradient max rel error {:.2e} ({} checked, {} skipped at kinks); sparse softmax violations {violations}/{SOFTMAX_CASES}",
            g.max_rel_error, g.checked, g.skipped
        ),
    )
}

fn criterion_10() -> Verdict {
    let c = collision_probability(0.7, 128);
    let c_ok = ((c - 1.49e-20) / 1.49e-20).abs() <= COLLISION_REL;
    let l = bce_loss(&[0.5; 8], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let l_ok = (l - std::f64::consts::LN_2).abs() <= BCE_TOL;
    let cases = [(1, 1), (19_999, 19_999), (20_000, 20_000), (20_001, 20_000), (1_000_000, 20_000)];
    let b_ok = cases.iter().all(|&(n, b)| batch_size(n) == b);
    verdict(c_ok && l_ok && b_ok, format!("collision {c:.3e}, bce(0.5) - ln2 = {:.1e}, batch rule {}", l - std::f64::consts::LN_2, if b_ok { "ok" } else { "wrong" }))
}

fn pufmoe(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pufmoe")).current_dir(dir).args(args).output().is_ok_and(|o| o.status.success())
}

fn digest_of(manifest: &Path) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest).ok()?).ok()?;
    v["outputs"][0]["sha256"].as_str().map(str::to_owned)
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let args = ["gen", "--spec", "xor:4,ipuf:1,5", "--n", "64", "--count", "8000", "--puf-seed", "7", "--challenge-seed", "8", "--out", "d.crpb"];
    let ran = pufmoe(&a, &args) && pufmoe(&b, &args);
    let same_digest = ran && digest_of(&a.join("d.crpb.manifest.json")).is_some_and(|d| Some(d) == digest_of(&b.join("d.crpb.manifest.json")));
    let replay = pufmoe(&a, &["replay", "d.crpb.manifest.json"]);

    let set = generate_crps(&[PufSpec::parse("xor:2", 64, 3).unwrap()], 4, 8_000).unwrap();
    let bytes = encode_crpb(&set);
    let size_ok = bytes.len() == CRPB_HEADER_LEN + 8_000 * (8 + 1);
    let round_trip = decode_crpb(&bytes).is_ok_and(|back| encode_crpb(&back) == bytes && (0..back.len()).all(|i| back.challenge_bytes(i) == set.challenge_bytes(i) && back.responses(i) == set.responses(i)));
    verdict(
        same_digest && replay && size_ok && round_trip,
        format!("identical-manifest digests {same_digest}, replay {replay}, size formula {size_ok}, round trip {round_trip}"),
    )
}

fn main() -> ExitCode {
    // Arguments from the test runner (filters, --nocapture) are ignored.
    let selected: Option<Vec<u32>> =
        std::env::var("PUFMOE_CRITERIA").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |c: u32| selected.as_ref().is_none_or(|v| v.contains(&c));
    let mut runs = Runs::default();
    let order: [u32; 11] = [8, 9, 10, 11, 1, 2, 4, 5, 6, 7, 3];
    let mut failed = Vec::new();
    for c in order {
        if !want(c) {
            continue;
        }
        let t = Instant::now();
        let v = match c {
            1 => criterion_1(&mut runs),
            2 => criterion_2(&mut runs),
            3 => criterion_3(&mut runs),
            4 => criterion_4(&mut runs),
            5 => criterion_5(&mut runs),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        let secs = t.elapsed().as_secs_f64();
        match v {
            Verdict::Pass(d) => println!("criterion {c:>2}: PASS ({secs:.0}s) {d}"),
            Verdict::Skip(d) => println!("criterion {c:>2}: SKIP {d}"),
            Verdict::Fail(d) => {
                println!("criterion {c:>2}: FAIL ({secs:.0}s) {d}");
                failed.push(c);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?} (runs marked * missed their bar)");
        ExitCode::FAILURE
    }
}
