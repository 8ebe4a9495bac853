//! Experiment orchestration: data preparation, the four unlearning stages
//! across methods and strategies, sweeps, and CSV reports.

mod config;
mod report;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

pub use config::{DatasetConfig, ExperimentConfig, SeedConfig, SweepConfig};
pub use report::{
    emit_results, read_csv, round_sig, shard_composition_report, write_csv, CompositionRow, ExperimentOutput,
    ResultRow, TimingRow, COMPOSITION_HEADER, RESULT_HEADER, TIMING_HEADER,
};

use crate::dataset::{self, InteractionSet};
use crate::error::{Error, Result};
use crate::eval::{
    self, a_igf_from, mio_accuracy, mio_features, per_user_metrics_excluding, shard_gf, train_mio, GroupAssignment,
    MioModel, ACTIVE_FRACTION, METRIC_K,
};
use crate::graph::{select_unlearn_set, BipartiteGraph, UnlearnSet};
use crate::model::{self, ModelKind, TrainLog, TrainedModel};
use crate::rng;
use crate::unlearn::{self, Method, PreparedState, Serving, SharedArtifacts, UnlearnContext, UnlearnOutcome};

const HOLDOUT_STREAM: u64 = 0x401D;
const MIO_MEMBER_STREAM: u64 = 0x3E3B;
const MIO_QUERY_STREAM: u64 = 0x9E61;
/// Users unlearned one at a time when timing single requests.
const SINGLE_REQUESTS: usize = 3;

/// Splits and holdout shared by every method of one experiment.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub name: String,
    pub full: InteractionSet,
    /// Training interactions without the holdout users.
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    /// Users excluded from all training, used as membership non-members.
    pub holdout_users: Vec<usize>,
    /// Holdout users' interactions that fell in the training split.
    pub holdout_train: InteractionSet,
    pub fingerprint: u64,
}

fn fingerprint<T: Hash>(parts: &[&T]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in parts {
        p.hash(&mut h);
    }
    h.finish()
}

/// Loads, filters and splits the dataset, then reserves a seeded fraction
/// of users as the membership holdout.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let raw = dataset::load_ratings(&cfg.dataset.path)?;
    let full = dataset::preprocess(&raw, cfg.dataset.min_interactions)?;
    bundle_from(cfg, full)
}

/// [`prepare_data`] for an already preprocessed dataset.
pub fn bundle_from(cfg: &ExperimentConfig, full: InteractionSet) -> Result<DataBundle> {
    let sp = dataset::split(&full, (0.8, 0.1, 0.1), cfg.seeds.split)?;
    let mut users = full.active_users();
    users.shuffle(&mut rng::derived_rng(cfg.seeds.split, HOLDOUT_STREAM));
    let n_holdout = ((users.len() as f64 * cfg.mio_holdout_fraction).round() as usize).clamp(1, users.len() - 1);
    let mut holdout_users = users[..n_holdout].to_vec();
    holdout_users.sort_unstable();
    let held = |u: usize| holdout_users.binary_search(&u).is_ok();
    let train = sp.train.filter_users(|u| !held(u));
    let valid = sp.valid.filter_users(|u| !held(u));
    let test = sp.test.filter_users(|u| !held(u));
    let holdout_train = sp.train.filter_users(held);
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fingerprint = fingerprint(&[&train.interactions, &valid.interactions, &test.interactions]);
    Ok(DataBundle {
        name: cfg.dataset.name.clone(),
        full,
        train,
        valid,
        test,
        holdout_users,
        holdout_train,
        fingerprint,
    })
}

/// Per model kind: the original model, division features and the
/// membership oracle, shared by every cell.
#[derive(Debug, Clone)]
pub struct ModelArtifacts {
    pub kind: ModelKind,
    pub original: Arc<TrainedModel>,
    pub original_log: TrainLog,
    pub shared: SharedArtifacts,
    pub mio: MioModel,
    pub stage_seconds: f64,
}

fn items_of(train: &InteractionSet, holdout_train: &InteractionSet) -> Vec<Vec<usize>> {
    let mut items = train.user_items();
    for (u, its) in holdout_train.user_items().into_iter().enumerate() {
        if !its.is_empty() {
            items[u] = its;
        }
    }
    items
}

/// Trains the membership oracle on the original model: an equal-sized
/// seeded sample of training users against the holdout users.
pub fn fit_mio(original: &TrainedModel, data: &DataBundle, seed: u64) -> Result<MioModel> {
    let emb = original.scoring_embeddings();
    let holdout_items = data.holdout_train.user_items();
    let nonmember: Vec<Vec<f64>> = data
        .holdout_users
        .iter()
        .filter(|&&u| !holdout_items[u].is_empty())
        .map(|&u| mio_features(emb, u, &holdout_items[u]))
        .collect::<Result<_>>()?;
    let mut members = data.train.active_users();
    members.shuffle(&mut rng::derived_rng(seed, MIO_MEMBER_STREAM));
    members.truncate(nonmember.len());
    members.sort_unstable();
    let train_items = data.train.user_items();
    let member: Vec<Vec<f64>> = members
        .iter()
        .map(|&u| mio_features(emb, u, &train_items[u]))
        .collect::<Result<_>>()?;
    train_mio(&member, &nonmember, seed)
}

pub fn prepare_artifacts(cfg: &ExperimentConfig, data: &DataBundle, kind: ModelKind) -> Result<ModelArtifacts> {
    let t0 = Instant::now();
    let (original, original_log) = model::train(kind, &data.train, &data.valid, &cfg.hyper, cfg.seeds.training)?;
    let original = Arc::new(original);
    let needs_division = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::RecEraser | Method::UltraRe));
    let division_features = if needs_division {
        Some(Arc::new(unlearn::division_features(
            &data.train,
            &cfg.hyper,
            cfg.seeds.training,
        )?))
    } else {
        None
    };
    let mio = fit_mio(&original, data, cfg.seeds.mio)?;
    Ok(ModelArtifacts {
        kind,
        original: Arc::clone(&original),
        original_log: original_log.clone(),
        shared: SharedArtifacts {
            original: Some((original, original_log)),
            division_features,
        },
        mio,
        stage_seconds: t0.elapsed().as_secs_f64(),
    })
}

fn context(cfg: &ExperimentConfig, data: &DataBundle, kind: ModelKind, num_shards: usize) -> UnlearnContext {
    let mut ctx = UnlearnContext::new(
        kind,
        data.train.clone(),
        data.valid.clone(),
        cfg.hyper.clone(),
        cfg.seeds.training,
    );
    ctx.num_shards = num_shards;
    ctx.workers = cfg.workers;
    ctx.scif = cfg.scif.clone();
    ctx.absent_shard = cfg.absent_shard;
    ctx
}

/// Stage II for every strategy at one ratio.
pub fn select_sets(cfg: &ExperimentConfig, data: &DataBundle, ratio: f64) -> Result<Vec<UnlearnSet>> {
    let g = BipartiteGraph::build(&data.train);
    cfg.strategies
        .iter()
        .map(|&s| select_unlearn_set(&g, &data.train, s, ratio, cfg.seeds.selection, cfg.ratio_basis))
        .collect()
}

fn remaining_groups(data: &DataBundle, set: &UnlearnSet) -> Result<GroupAssignment> {
    let remaining: Vec<usize> = data
        .train
        .active_users()
        .into_iter()
        .filter(|&u| !set.contains_user(u))
        .collect();
    GroupAssignment::by_activity(&data.train, &remaining, ACTIVE_FRACTION)
}

struct Metrics {
    ndcg: f64,
    hr: f64,
    mio: f64,
    a_igf: f64,
    shard_gf: Option<f64>,
}

/// Stage IV.
fn evaluate(
    serving: &Serving,
    data: &DataBundle,
    arts: &ModelArtifacts,
    set: &UnlearnSet,
    groups: &GroupAssignment,
    seed: u64,
    log: &mut Vec<String>,
) -> Result<Metrics> {
    let per_user = per_user_metrics_excluding(serving, &data.test, METRIC_K, &data.valid);
    let ndcg = eval::mean(per_user.iter().map(|m| m.ndcg));
    let hr = eval::mean(per_user.iter().map(|m| m.hr));
    let items = items_of(&data.train, &data.holdout_train);
    let mio = mio_accuracy(
        &arts.mio,
        serving,
        &set.users,
        &data.holdout_users,
        &items,
        rng::derive(seed, MIO_QUERY_STREAM),
    )?;
    let a_igf = a_igf_from(&per_user, groups)?;
    let shard_gf = match serving.as_ensemble() {
        Some(ens) => {
            let tests: Vec<InteractionSet> = (0..ens.num_shards())
                .map(|s| data.test.filter_users(|u| ens.plan.shard_of(u) == Some(s)))
                .collect();
            let (v, skipped) = shard_gf(&ens.submodels, &tests, METRIC_K, Some(&data.valid))?;
            if !skipped.is_empty() {
                log.push(format!("shard_gf skipped shards without test users: {skipped:?}"));
            }
            Some(v)
        }
        None => None,
    };
    Ok(Metrics {
        ndcg,
        hr,
        mio,
        a_igf,
        shard_gf,
    })
}

fn base_row(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    method: &str,
    set: &UnlearnSet,
    ratio: f64,
    s: usize,
) -> ResultRow {
    ResultRow {
        dataset: cfg.dataset.name.clone(),
        model: kind.as_str().to_string(),
        method: method.to_string(),
        strategy: set.strategy.as_str().to_string(),
        ratio,
        num_shards: s,
        status: "ok".into(),
        ndcg20: None,
        hr20: None,
        mio_accuracy: None,
        a_igf: None,
        shard_gf: None,
        unlearned_users: set.users.len(),
        unlearned_interactions: set.interactions.len(),
        split_seed: cfg.seeds.split,
        selection_seed: cfg.seeds.selection,
        training_seed: cfg.seeds.training,
        mio_seed: cfg.seeds.mio,
    }
}

fn fill(row: &mut ResultRow, m: Metrics) {
    row.ndcg20 = Some(m.ndcg);
    row.hr20 = Some(m.hr);
    row.mio_accuracy = Some(m.mio);
    row.a_igf = Some(m.a_igf);
    row.shard_gf = m.shard_gf;
}

fn single_request_seconds(
    state: &PreparedState,
    ctx: &UnlearnContext,
    set: &UnlearnSet,
    train: &InteractionSet,
) -> Result<Option<f64>> {
    if !state.method.is_sharded() || set.users.is_empty() {
        return Ok(None);
    }
    let step = (set.users.len() / SINGLE_REQUESTS).max(1);
    let picks: Vec<usize> = set.users.iter().step_by(step).take(SINGLE_REQUESTS).copied().collect();
    let mut total = 0.0;
    for &u in &picks {
        let one = UnlearnSet::for_users(set.strategy, &[u], train);
        total += unlearn::unlearn(state, ctx, &one)?.wall_time_seconds;
    }
    Ok(Some(total / picks.len() as f64))
}

/// Stages I, III and IV for every method and strategy at one ratio and
/// shard count.
pub fn run_cells(
    cfg: &ExperimentConfig,
    data: &DataBundle,
    arts: &ModelArtifacts,
    ratio: f64,
    num_shards: usize,
) -> Result<ExperimentOutput> {
    let kind = arts.kind;
    let mut out = ExperimentOutput::default();
    let sets = select_sets(cfg, data, ratio)?;
    let set_fp = fingerprint(&[&sets.iter().map(|s| &s.users).collect::<Vec<_>>()]);
    out.log.push(format!(
        "cells model={kind} ratio={ratio} shards={num_shards} split_fp={:016x} sets_fp={set_fp:016x} workers={}",
        data.fingerprint,
        context(cfg, data, kind, num_shards).effective_workers(num_shards)
    ));
    for set in &sets {
        out.log.push(format!(
            "  strategy={} users={} interactions={} ratio={:.4}",
            set.strategy,
            set.users.len(),
            set.interactions.len(),
            set.ratio
        ));
    }

    let groups: Vec<std::result::Result<GroupAssignment, String>> = sets
        .iter()
        .map(|s| remaining_groups(data, s).map_err(|e| e.to_string()))
        .collect();
    let original = Serving::Single(Arc::clone(&arts.original));
    for (set, groups) in sets.iter().zip(&groups) {
        let mut row = base_row(cfg, kind, "learn", set, ratio, num_shards);
        let metrics = groups.as_ref().map_err(Clone::clone).and_then(|g| {
            evaluate(&original, data, arts, set, g, cfg.seeds.mio, &mut out.log).map_err(|e| e.to_string())
        });
        match metrics {
            Ok(m) => fill(&mut row, m),
            Err(e) => row.status = format!("failed: {e}"),
        }
        out.baseline.push(row.rounded());
    }

    let ctx = context(cfg, data, kind, num_shards);
    for &method in &cfg.methods {
        let state = unlearn::prepare(method, &ctx, &arts.shared).map_err(|e| e.to_string());
        if let Ok(st) = &state {
            out.log.push(format!(
                "prepare model={kind} method={method} shards={num_shards} seconds={:.3} logs={}",
                st.prepare_seconds,
                st.logs.len()
            ));
        }
        for (set, groups) in sets.iter().zip(&groups) {
            let mut row = base_row(cfg, kind, method.as_str(), set, ratio, num_shards);
            let mut timing = TimingRow {
                model: kind.as_str().into(),
                method: method.as_str().into(),
                strategy: set.strategy.as_str().into(),
                ratio,
                num_shards,
                training_seed: cfg.seeds.training,
                prepare_s: state.as_ref().map(|s| s.prepare_seconds).unwrap_or(0.0),
                wall_time_s: None,
                critical_path_s: None,
                single_request_s: None,
                shards_retrained: 0,
                workers: 0,
                cg_iterations: None,
                cg_residual: None,
                cg_converged: None,
            };
            let result = (|| -> std::result::Result<(UnlearnOutcome, Metrics, Option<f64>), String> {
                let state = state.as_ref().map_err(Clone::clone)?;
                let g = groups.as_ref().map_err(Clone::clone)?;
                let outcome = unlearn::unlearn(state, &ctx, set).map_err(|e| e.to_string())?;
                let metrics = evaluate(&outcome.serving, data, arts, set, g, cfg.seeds.mio, &mut out.log)
                    .map_err(|e| e.to_string())?;
                let single = single_request_seconds(state, &ctx, set, &data.train).map_err(|e| e.to_string())?;
                if let Some(ens) = state.serving.as_ensemble() {
                    for (s, (active, inactive)) in shard_composition_report(&ens.plan, g).into_iter().enumerate() {
                        out.composition.push(CompositionRow {
                            model: kind.as_str().into(),
                            method: method.as_str().into(),
                            strategy: set.strategy.as_str().into(),
                            num_shards,
                            shard: s,
                            active,
                            inactive,
                        });
                    }
                }
                Ok((outcome, metrics, single))
            })();
            match result {
                Ok((outcome, metrics, single)) => {
                    fill(&mut row, metrics);
                    timing.wall_time_s = Some(outcome.wall_time_seconds);
                    timing.critical_path_s = Some(outcome.critical_path_seconds());
                    timing.single_request_s = single;
                    timing.shards_retrained = outcome.shards_retrained;
                    timing.workers = outcome.workers;
                    if let Some(inf) = &outcome.influence {
                        timing.cg_iterations = Some(inf.cg_iterations);
                        timing.cg_residual = Some(inf.residual_norm);
                        timing.cg_converged = Some(inf.converged);
                        if let Some(w) = &inf.warning {
                            out.log
                                .push(format!("  warning method={method} strategy={}: {w}", set.strategy));
                        }
                    }
                    out.log.push(format!(
                        "  unlearn method={method} strategy={} wall={:.3}s shards_retrained={} workers={} shard_times={:?}",
                        set.strategy,
                        outcome.wall_time_seconds,
                        outcome.shards_retrained,
                        outcome.workers,
                        outcome
                            .shard_seconds
                            .iter()
                            .map(|(s, t)| format!("{s}:{t:.3}"))
                            .collect::<Vec<_>>()
                    ));
                }
                Err(e) => {
                    out.log
                        .push(format!("  failed method={method} strategy={}: {e}", set.strategy));
                    row.status = format!("failed: {e}");
                }
            }
            out.rows.push(row.rounded());
            out.timings.push(timing);
        }
    }
    Ok(out)
}

fn header_log(cfg: &ExperimentConfig, data: &DataBundle) -> Vec<String> {
    vec![
        format!("dataset={} path={}", cfg.dataset.name, cfg.dataset.path.display()),
        format!(
            "seeds split={} selection={} training={} mio={}",
            cfg.seeds.split, cfg.seeds.selection, cfg.seeds.training, cfg.seeds.mio
        ),
        format!(
            "users={} items={} interactions={} train={} valid={} test={}",
            data.full.num_users,
            data.full.num_items,
            data.full.len(),
            data.train.len(),
            data.valid.len(),
            data.test.len()
        ),
        format!(
            "mio holdout: {} users ({} training interactions) reserved before training and excluded from every model",
            data.holdout_users.len(),
            data.holdout_train.len()
        ),
        "shard submodels early-stop on the validation interactions of their own users".into(),
    ]
}

fn artifacts_log(arts: &ModelArtifacts) -> String {
    format!(
        "original model={} best_epoch={} stop_epoch={} val_ndcg={:.4} seconds={:.3}",
        arts.kind,
        arts.original_log.best_epoch,
        arts.original_log.stop_epoch,
        arts.original_log
            .val_ndcg
            .get(arts.original_log.best_epoch.saturating_sub(1))
            .copied()
            .unwrap_or(0.0),
        arts.stage_seconds
    )
}

/// All models × methods × strategies at the configured ratio and shard
/// count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_experiment_on(cfg, &data)
}

/// [`run_experiment`] on prepared data.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &DataBundle) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput {
        log: header_log(cfg, data),
        ..Default::default()
    };
    for &kind in &cfg.models {
        let arts = prepare_artifacts(cfg, data, kind)?;
        out.log.push(artifacts_log(&arts));
        out.extend(run_cells(cfg, data, &arts, cfg.unlearn_ratio, cfg.num_shards)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDim {
    Shards,
    Ratio,
}

impl FromStr for SweepDim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shards" => Ok(SweepDim::Shards),
            "ratio" => Ok(SweepDim::Ratio),
            other => Err(Error::invalid(format!("unknown sweep dimension {other:?}"))),
        }
    }
}

/// Re-runs the cells for each value of one dimension, reusing the data,
/// original models and membership oracle.
pub fn sweep(cfg: &ExperimentConfig, dim: SweepDim, values: &[f64]) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    sweep_on(cfg, &data, dim, values)
}

/// [`sweep`] on prepared data.
pub fn sweep_on(cfg: &ExperimentConfig, data: &DataBundle, dim: SweepDim, values: &[f64]) -> Result<ExperimentOutput> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    for &v in values {
        let bad = match dim {
            SweepDim::Shards => v < 1.0 || v.fract() != 0.0,
            SweepDim::Ratio => !(v > 0.0 && v < 1.0),
        };
        if bad {
            return Err(Error::invalid(format!("invalid {dim:?} sweep value {v}")));
        }
    }
    let mut out = ExperimentOutput {
        log: header_log(cfg, data),
        ..Default::default()
    };
    for &kind in &cfg.models {
        let arts = prepare_artifacts(cfg, data, kind)?;
        out.log.push(artifacts_log(&arts));
        for &v in values {
            let (ratio, shards) = match dim {
                SweepDim::Shards => (cfg.unlearn_ratio, v as usize),
                SweepDim::Ratio => (v, cfg.num_shards),
            };
            out.extend(run_cells(cfg, data, &arts, ratio, shards)?);
        }
    }
    Ok(out)
}
