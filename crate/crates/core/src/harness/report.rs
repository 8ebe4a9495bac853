use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroupAssignment;
use crate::unlearn::ShardPlan;

/// Rounds to six significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// One (model, method, strategy, ratio, shard count) cell. Metric fields are
/// empty for failed cells; `shard_gf` is empty for non-sharded methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub strategy: String,
    pub ratio: f64,
    pub num_shards: usize,
    pub status: String,
    pub ndcg20: Option<f64>,
    pub hr20: Option<f64>,
    pub mio_accuracy: Option<f64>,
    pub a_igf: Option<f64>,
    pub shard_gf: Option<f64>,
    pub unlearned_users: usize,
    pub unlearned_interactions: usize,
    pub split_seed: u64,
    pub selection_seed: u64,
    pub training_seed: u64,
    pub mio_seed: u64,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub(crate) fn rounded(mut self) -> Self {
        for v in [
            &mut self.ndcg20,
            &mut self.hr20,
            &mut self.mio_accuracy,
            &mut self.a_igf,
            &mut self.shard_gf,
        ] {
            *v = v.map(round_sig);
        }
        self.ratio = round_sig(self.ratio);
        self
    }
}

/// Timing of one cell. Kept apart from [`ResultRow`] so that result files
/// are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub method: String,
    pub strategy: String,
    pub ratio: f64,
    pub num_shards: usize,
    pub training_seed: u64,
    pub prepare_s: f64,
    pub wall_time_s: Option<f64>,
    pub critical_path_s: Option<f64>,
    /// Mean wall time of unlearning one user at a time.
    pub single_request_s: Option<f64>,
    pub shards_retrained: usize,
    pub workers: usize,
    pub cg_iterations: Option<usize>,
    pub cg_residual: Option<f64>,
    pub cg_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub model: String,
    pub method: String,
    pub strategy: String,
    pub num_shards: usize,
    pub shard: usize,
    pub active: usize,
    pub inactive: usize,
}

/// Active and inactive user counts per shard.
pub fn shard_composition_report(plan: &ShardPlan, groups: &GroupAssignment) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); plan.num_shards];
    for &u in &groups.active {
        if let Some(s) = plan.shard_of(u) {
            counts[s].0 += 1;
        }
    }
    for &u in &groups.inactive {
        if let Some(s) = plan.shard_of(u) {
            counts[s].1 += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// Metrics of the models before unlearning, one row per strategy.
    pub baseline: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub composition: Vec<CompositionRow>,
    pub log: Vec<String>,
}

impl ExperimentOutput {
    pub fn extend(&mut self, other: ExperimentOutput) {
        self.rows.extend(other.rows);
        self.baseline.extend(other.baseline);
        self.timings.extend(other.timings);
        self.composition.extend(other.composition);
        self.log.extend(other.log);
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const RESULT_HEADER: [&str; 18] = [
    "dataset",
    "model",
    "method",
    "strategy",
    "ratio",
    "num_shards",
    "status",
    "ndcg20",
    "hr20",
    "mio_accuracy",
    "a_igf",
    "shard_gf",
    "unlearned_users",
    "unlearned_interactions",
    "split_seed",
    "selection_seed",
    "training_seed",
    "mio_seed",
];

pub const TIMING_HEADER: [&str; 15] = [
    "model",
    "method",
    "strategy",
    "ratio",
    "num_shards",
    "training_seed",
    "prepare_s",
    "wall_time_s",
    "critical_path_s",
    "single_request_s",
    "shards_retrained",
    "workers",
    "cg_iterations",
    "cg_residual",
    "cg_converged",
];

pub const COMPOSITION_HEADER: [&str; 7] = [
    "model",
    "method",
    "strategy",
    "num_shards",
    "shard",
    "active",
    "inactive",
];

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `baseline.csv`, `timings.csv`,
/// `shard_composition.csv` and `run_log.txt` into `out_dir`.
pub fn emit_results(out: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out.rows, &RESULT_HEADER, create(&out_dir.join("results.csv"))?)?;
    write_csv(&out.baseline, &RESULT_HEADER, create(&out_dir.join("baseline.csv"))?)?;
    write_csv(&out.timings, &TIMING_HEADER, create(&out_dir.join("timings.csv"))?)?;
    write_csv(
        &out.composition,
        &COMPOSITION_HEADER,
        create(&out_dir.join("shard_composition.csv"))?,
    )?;
    let log_path = out_dir.join("run_log.txt");
    let mut log = create(&log_path)?;
    for line in &out.log {
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
    }
    Ok(())
}
