//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use recforget::graph::Strategy;
use recforget::harness::{self, ExperimentConfig, ExperimentOutput, ResultRow, SeedConfig, SweepDim, TimingRow};
use recforget::model::ModelKind;
use recforget::unlearn::{Method, PartitionMode};

use common::*;

const SEEDS: [u64; 3] = [1, 2, 3];
const PAPER_LEARN_NDCG: f64 = 0.3215;

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        println!("[{}] {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

fn dataset_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data")
}

fn base_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("ml-100k", dataset_path());
    cfg.models = vec![ModelKind::Wmf];
    cfg.num_shards = 10;
    cfg.unlearn_ratio = 0.05;
    cfg.seeds = SeedConfig::from_base(seed);
    cfg.hyper.wmf_negative_weight = 1.0;
    cfg
}

fn row<'a>(rows: &'a [ResultRow], method: &str, strategy: Strategy) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.method == method && r.strategy == strategy.as_str())
        .unwrap_or_else(|| panic!("no row for {method}/{strategy}"))
}

fn ndcg(out: &ExperimentOutput, method: Method, strategy: Strategy) -> f64 {
    row(&out.rows, method.as_str(), strategy).ndcg20.unwrap_or(f64::NAN)
}

fn timing(out: &ExperimentOutput, method: Method) -> &TimingRow {
    out.timings
        .iter()
        .find(|t| t.method == method.as_str() && t.strategy == Strategy::Random.as_str())
        .expect("timing row")
}

/// Number of adjacent increases in a sequence expected to be non-increasing.
fn inversions(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] > w[0]).count()
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" / ")
}

fn oracles(rep: &mut Report) {
    for kind in MODEL_KINDS {
        let worst = (0..20).map(|s| gradient_error(kind, s)).fold(0.0, f64::max);
        rep.check(
            &format!("gradient vs finite differences ({kind})"),
            worst < 1e-4,
            format!("max relative error {worst:.2e} over 20 instances (< 1e-4)"),
        );
    }
    let (mut fd, mut sym) = (0.0f64, 0.0f64);
    for kind in MODEL_KINDS {
        for s in 0..20 {
            let (a, b) = hvp_errors(kind, s);
            fd = fd.max(a);
            sym = sym.max(b);
        }
    }
    rep.check(
        "HVP vs finite-differenced gradients",
        fd < 1e-3,
        format!("max relative error {fd:.2e} (< 1e-3)"),
    );
    rep.check(
        "HVP symmetry",
        sym <= 1e-8,
        format!("max |v'Hw - w'Hv| {sym:.2e} (<= 1e-8)"),
    );
    let worst = (0..100).map(importance_error).fold(0.0, f64::max);
    rep.check(
        "importance vs brute force",
        worst <= 1e-12,
        format!("max relative error {worst:.2e} over 100 graphs (<= 1e-12)"),
    );
    let worst = (0..50).map(ranking_error).fold(0.0, f64::max);
    rep.check(
        "NDCG@20 / HR@20 vs brute force",
        worst <= 1e-12,
        format!("max abs error {worst:.2e} over 50 instances (<= 1e-12)"),
    );
}

fn paper_patterns(rep: &mut Report) {
    let mut runs = Vec::new();
    for seed in SEEDS {
        let t0 = Instant::now();
        let out = harness::run_experiment(&base_config(seed)).expect("experiment run");
        println!("  seed {seed}: full grid in {:.1}s", t0.elapsed().as_secs_f64());
        for r in &out.rows {
            if !r.is_ok() {
                println!("  seed {seed}: {} / {} {}", r.method, r.strategy, r.status);
            }
        }
        runs.push(out);
    }

    let learn: Vec<f64> = runs
        .iter()
        .map(|o| row(&o.baseline, "learn", Strategy::Random).ndcg20.unwrap_or(f64::NAN))
        .collect();
    rep.check(
        "original-model NDCG@20",
        learn.iter().all(|x| (x - PAPER_LEARN_NDCG).abs() <= 0.05),
        format!("{} per seed (target {PAPER_LEARN_NDCG} ± 0.05)", fmt(&learn)),
    );

    let mio = |o: &ExperimentOutput, m: &str| -> f64 {
        let rows = if m == "learn" { &o.baseline } else { &o.rows };
        row(rows, m, Strategy::Random).mio_accuracy.unwrap_or(f64::NAN)
    };
    let learn_mio: Vec<f64> = runs.iter().map(|o| mio(o, "learn")).collect();
    let retrain_mio: Vec<f64> = runs.iter().map(|o| mio(o, "retrain")).collect();
    let scif_mio: Vec<f64> = runs.iter().map(|o| mio(o, "scif")).collect();
    rep.check(
        "MIO accuracy, original model",
        learn_mio.iter().all(|&x| x >= 0.65),
        format!("{} per seed (>= 0.65)", fmt(&learn_mio)),
    );
    rep.check(
        "MIO accuracy, Retrain",
        retrain_mio.iter().all(|&x| (0.5..=0.6).contains(&x)),
        format!("{} per seed (in [0.50, 0.60])", fmt(&retrain_mio)),
    );
    rep.check(
        "MIO accuracy, SCIF",
        scif_mio
            .iter()
            .zip(&retrain_mio)
            .all(|(&s, &r)| (0.5..=0.63).contains(&s) && s >= r),
        format!("{} per seed (in [0.50, 0.63] and >= Retrain)", fmt(&scif_mio)),
    );

    let mut utility_ok = 0;
    for (seed, o) in SEEDS.iter().zip(&runs) {
        let [re, sisa, rec, ultra] =
            [Method::Retrain, Method::Sisa, Method::RecEraser, Method::UltraRe].map(|m| ndcg(o, m, Strategy::Random));
        let ok = ultra >= rec && rec >= sisa && re >= ultra.max(rec).max(sisa);
        utility_ok += usize::from(ok);
        println!("  seed {seed}: NDCG@20 retrain {re:.4} ultrare {ultra:.4} receraser {rec:.4} sisa {sisa:.4}");
    }
    rep.check(
        "utility ordering UltraRE >= RecEraser >= SISA, Retrain >= EU",
        utility_ok >= 2,
        format!("holds in {utility_ok}/3 seeds (>= 2)"),
    );

    let mut wall_ok = 0;
    let mut critical_ok = 0;
    for (seed, o) in SEEDS.iter().zip(&runs) {
        let get = |m: Method, f: fn(&TimingRow) -> Option<f64>| f(timing(o, m)).unwrap_or(f64::NAN);
        let order = |f: fn(&TimingRow) -> Option<f64>| {
            let [scif, sisa, rec, ultra, re] = [
                Method::Scif,
                Method::Sisa,
                Method::RecEraser,
                Method::UltraRe,
                Method::Retrain,
            ]
            .map(|m| get(m, f));
            (
                scif < sisa && sisa < rec.min(ultra) && rec.max(ultra) < re,
                [scif, sisa, rec, ultra, re],
            )
        };
        let (w_ok, w) = order(|t| t.wall_time_s);
        let (c_ok, c) = order(|t| t.critical_path_s);
        wall_ok += usize::from(w_ok);
        critical_ok += usize::from(c_ok);
        println!(
            "  seed {seed}: wall s scif/sisa/receraser/ultrare/retrain {} (workers {}); critical path {}",
            fmt(&w),
            timing(o, Method::Sisa).workers,
            fmt(&c)
        );
    }
    rep.check(
        "wall time SCIF < SISA < {RecEraser, UltraRE} < Retrain",
        wall_ok == 3,
        format!(
            "holds in {wall_ok}/3 seeds (all required; {} cores available)",
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        ),
    );
    println!("  info: the same ordering on per-request critical path holds in {critical_ok}/3 seeds");

    let mut strategy_ok = 0;
    for (seed, o) in SEEDS.iter().zip(&runs) {
        let v = Strategy::ALL.map(|s| ndcg(o, Method::Scif, s));
        strategy_ok += usize::from(v[0] <= v[1] && v[1] <= v[2]);
        println!("  seed {seed}: SCIF NDCG@20 core/random/edge {}", fmt(&v));
    }
    rep.check(
        "SCIF strategy effect core <= random <= edge",
        strategy_ok >= 2,
        format!("holds in {strategy_ok}/3 seeds (>= 2)"),
    );
}

fn sweeps(rep: &mut Report) {
    let mut cfg = base_config(SEEDS[0]);
    cfg.methods = vec![Method::Sisa];
    cfg.strategies = vec![Strategy::Random];
    let out = harness::sweep(&cfg, SweepDim::Shards, &[5.0, 10.0, 20.0]).expect("shard sweep");
    let nd: Vec<f64> = out.rows.iter().map(|r| r.ndcg20.unwrap_or(f64::NAN)).collect();
    let req: Vec<f64> = out
        .timings
        .iter()
        .map(|t| t.single_request_s.unwrap_or(f64::NAN))
        .collect();
    rep.check(
        "shard sweep: NDCG@20 non-increasing in S",
        nd.len() == 3 && inversions(&nd) <= 1,
        format!("S=5/10/20: {} ({} inversions, <= 1)", fmt(&nd), inversions(&nd)),
    );
    rep.check(
        "shard sweep: per-request unlearning time non-increasing in S",
        req.len() == 3 && inversions(&req) <= 1,
        format!("S=5/10/20: {} s ({} inversions, <= 1)", fmt(&req), inversions(&req)),
    );

    let mut cfg = base_config(SEEDS[0]);
    cfg.methods = vec![Method::Retrain];
    cfg.strategies = vec![Strategy::Random];
    let out = harness::sweep(&cfg, SweepDim::Ratio, &[0.05, 0.10, 0.15, 0.20]).expect("ratio sweep");
    let nd: Vec<f64> = out.rows.iter().map(|r| r.ndcg20.unwrap_or(f64::NAN)).collect();
    rep.check(
        "ratio sweep: Retrain NDCG@20 non-increasing in ratio",
        nd.len() == 4 && inversions(&nd) <= 1,
        format!("5/10/15/20%: {} ({} inversions, <= 1)", fmt(&nd), inversions(&nd)),
    );
}

fn properties(rep: &mut Report) {
    let mut leaked = 0;
    let mut changed = 0;
    let mut off_simplex = 0;
    let mut runs = 0;
    for method in [Method::Sisa, Method::RecEraser, Method::UltraRe] {
        for seed in 0..4 {
            let c = check_sharded_unlearning(method, seed);
            leaked += c.leaked;
            changed += c.changed_untouched;
            off_simplex += usize::from(!c.weights_on_simplex);
            runs += 1;
        }
    }
    rep.check(
        "EU data-expungement scan",
        leaked == 0,
        format!("{leaked} unlearned interactions found across {runs} unlearning runs"),
    );
    rep.check(
        "untouched shards bit-identical",
        changed == 0,
        format!("{changed} untouched shards changed across {runs} runs"),
    );
    let agg_bad = (0..50u64)
        .filter(|&s| {
            let (w, _, _) = aggregator_oracle(s, 2 + (s as usize % 7));
            w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        })
        .count();
    rep.check(
        "aggregator weights on the simplex",
        off_simplex == 0 && agg_bad == 0,
        format!("{off_simplex} fitted ensembles and {agg_bad}/50 synthetic fits off the simplex"),
    );
    let modes = [
        PartitionMode::Random,
        PartitionMode::BalancedKmeans,
        PartitionMode::BalancedOt,
    ];
    let bad: Vec<String> = modes
        .iter()
        .flat_map(|&m| (0..30).filter_map(move |s| check_partition(m, s).err()))
        .collect();
    rep.check(
        "partition capacity bounds (random, k-means, transport)",
        bad.is_empty(),
        format!(
            "{} violations over 90 partitions{}",
            bad.len(),
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    );
    let improved = (0..20u64)
        .filter(|&s| {
            let (scif, orig) = scif_distances(s);
            scif < orig
        })
        .count();
    rep.check(
        "SCIF moves toward the retrained optimum",
        improved >= 18,
        format!("{improved}/20 tiny instances improved (>= 18)"),
    );
    let not_half = (0..50)
        .map(constant_mio_scores)
        .filter(|&(a, b)| a != 0.5 || b != 0.5)
        .count();
    rep.check(
        "constant classifier MIO accuracy is 0.5",
        not_half == 0,
        format!("{not_half}/50 balanced queries deviated"),
    );
    let worst = (0..50).map(a_igf_pair).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    rep.check(
        "A-IGF antisymmetry",
        worst < 1e-12,
        format!("max |a + swapped| {worst:.1e}"),
    );
    let worst = (0..20).map(single_shard_gf).fold(0.0, f64::max);
    rep.check("shardGF on a single shard", worst == 0.0, format!("max {worst}"));
}

fn main() {
    let t0 = Instant::now();
    let mut rep = Report { failures: Vec::new() };
    oracles(&mut rep);
    properties(&mut rep);
    if dataset_path().exists() {
        paper_patterns(&mut rep);
        sweeps(&mut rep);
    } else {
        rep.check(
            "ML-100K available",
            false,
            format!("{} not found", dataset_path().display()),
        );
    }
    println!("acceptance finished in {:.0}s", t0.elapsed().as_secs_f64());
    if rep.failures.is_empty() {
        println!("all criteria passed");
    } else {
        println!("{} criteria failed: {}", rep.failures.len(), rep.failures.join("; "));
        std::process::exit(1);
    }
}
