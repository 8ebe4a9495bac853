use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use recforget::harness::{self, read_csv, ExperimentConfig, ResultRow, SweepDim, TimingRow};
use recforget::rng;
use recforget::unlearn::Method;

/// MovieLens-formatted ratings for two communities of users.
fn synthetic_ratings(seed: u64) -> String {
    let mut r = rng::rng(seed);
    let mut out = String::new();
    for u in 1..=80 {
        let (lo, hi) = if u <= 40 { (1, 30) } else { (31, 60) };
        for i in lo..=hi {
            if r.gen_bool(0.45) {
                writeln!(
                    out,
                    "{u}\t{i}\t{}\t{}",
                    r.gen_range(1..=5),
                    880_000_000 + r.gen_range(0..1_000_000)
                )
                .unwrap();
            }
        }
    }
    out
}

fn small_config(dir: &Path) -> ExperimentConfig {
    let data = dir.join("u.data");
    std::fs::write(&data, synthetic_ratings(5)).unwrap();
    let mut cfg = ExperimentConfig::new("synthetic", data);
    cfg.num_shards = 3;
    cfg.unlearn_ratio = 0.1;
    cfg.hyper.embedding_dim = 8;
    cfg.hyper.batch_size = 128;
    cfg.hyper.max_epochs = 10;
    cfg.hyper.patience = 2;
    cfg.mio_holdout_fraction = 0.1;
    cfg.workers = 2;
    cfg
}

fn run_to(cfg: &ExperimentConfig, out: &Path) -> harness::ExperimentOutput {
    let res = harness::run_experiment(cfg).unwrap();
    harness::emit_results(&res, out).unwrap();
    res
}

#[test]
fn full_grid_produces_a_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let res = run_to(&cfg, &dir.path().join("out"));
    assert_eq!(res.rows.len(), cfg.methods.len() * cfg.strategies.len());
    assert_eq!(res.baseline.len(), cfg.strategies.len());
    for row in &res.rows {
        assert!(row.is_ok(), "{} / {}: {}", row.method, row.strategy, row.status);
        let mio = row.mio_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&mio));
        assert_eq!(row.shard_gf.is_some(), row.method != "retrain" && row.method != "scif");
    }
    for t in &res.timings {
        assert!(t.wall_time_s.unwrap() >= 0.0);
        assert_eq!(t.cg_iterations.is_some(), t.method == "scif");
    }
}

#[test]
fn identical_config_gives_identical_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.methods = vec![Method::Retrain, Method::Sisa, Method::UltraRe, Method::Scif];
    run_to(&cfg, &dir.path().join("a"));
    run_to(&cfg, &dir.path().join("b"));
    for f in ["results.csv", "baseline.csv", "shard_composition.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn emitted_files_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.methods = vec![Method::Sisa, Method::Scif];
    let out = dir.path().join("out");
    let res = run_to(&cfg, &out);
    let rows: Vec<ResultRow> = read_csv(&std::fs::read_to_string(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows, res.rows);
    let timings: Vec<TimingRow> = read_csv(&std::fs::read_to_string(out.join("timings.csv")).unwrap()).unwrap();
    assert_eq!(timings.len(), res.timings.len());
    assert!(out.join("run_log.txt").exists());
}

#[test]
fn config_file_drives_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.methods = vec![Method::Sisa];
    cfg.strategies = vec![recforget::graph::Strategy::Random];
    cfg.dataset.path = "u.data".into();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded.dataset.path, dir.path().join("u.data"));
    let res = harness::sweep(&loaded, SweepDim::Shards, &[2.0, 4.0]).unwrap();
    let shards: Vec<usize> = res.rows.iter().map(|r| r.num_shards).collect();
    assert_eq!(shards, vec![2, 4]);
}

#[test]
fn missing_dataset_is_reported() {
    let cfg = ExperimentConfig::new("none", "/nonexistent/u.data");
    assert!(harness::run_experiment(&cfg).is_err());
}
