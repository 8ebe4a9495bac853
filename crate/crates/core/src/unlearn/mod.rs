//! Exact (retraining, sharded) and approximate (influence) unlearning behind
//! one prepare / unlearn interface.

mod ensemble;
mod partition;
mod scif;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::eval::FeatureSource;
use crate::graph::UnlearnSet;
use crate::model::{self, EmbeddingTable, Hyperparams, ModelKind, Recommender, TrainLog, TrainedModel};
use crate::rng;

pub use ensemble::{
    aggregate_score, fit_aggregator, fit_weights_from_diffs, AbsentShard, AggregatorMode, ShardEnsemble,
    AGGREGATOR_EPOCHS, AGGREGATOR_LEARNING_RATE,
};
pub use partition::{
    balanced_partition, sinkhorn_plan, PartitionMode, ShardPlan, KMEANS_ITERATIONS, SINKHORN_EPSILON,
    SINKHORN_ITERATIONS,
};
pub use scif::{conjugate_gradient, scif_influence_update, CgResult, InfluenceUpdate, ScifConfig};

/// Epochs of the preliminary full-data WMF run whose user embeddings drive
/// collaboration-aware division.
pub const DIVISION_EPOCHS: usize = 50;

const SHARD_SEED_STREAM: u64 = 0x5A_0000;
const PARTITION_STREAM: u64 = 0xD1_0000;
const AGGREGATOR_STREAM: u64 = 0xA6_0000;
const DIVISION_STREAM: u64 = 0xD1_7000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Retrain,
    Sisa,
    #[serde(rename = "receraser")]
    RecEraser,
    #[serde(rename = "ultrare")]
    UltraRe,
    Scif,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Retrain,
        Method::Sisa,
        Method::RecEraser,
        Method::UltraRe,
        Method::Scif,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Sisa => "sisa",
            Method::RecEraser => "receraser",
            Method::UltraRe => "ultrare",
            Method::Scif => "scif",
        }
    }

    /// Sharded exact unlearning.
    pub fn is_sharded(self) -> bool {
        matches!(self, Method::Sisa | Method::RecEraser | Method::UltraRe)
    }

    pub fn partition_mode(self) -> Option<PartitionMode> {
        match self {
            Method::Sisa => Some(PartitionMode::Random),
            Method::RecEraser => Some(PartitionMode::BalancedKmeans),
            Method::UltraRe => Some(PartitionMode::BalancedOt),
            _ => None,
        }
    }

    pub fn aggregator_mode(self) -> AggregatorMode {
        match self {
            Method::RecEraser | Method::UltraRe => AggregatorMode::Learned,
            _ => AggregatorMode::Uniform,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "retrain" => Ok(Method::Retrain),
            "sisa" => Ok(Method::Sisa),
            "receraser" => Ok(Method::RecEraser),
            "ultrare" => Ok(Method::UltraRe),
            "scif" => Ok(Method::Scif),
            other => Err(Error::invalid(format!("unknown unlearning method {other:?}"))),
        }
    }
}

/// The model that answers recommendation queries.
#[derive(Debug, Clone)]
pub enum Serving {
    Single(Arc<TrainedModel>),
    Ensemble(ShardEnsemble),
}

impl Serving {
    pub fn as_ensemble(&self) -> Option<&ShardEnsemble> {
        match self {
            Serving::Ensemble(e) => Some(e),
            Serving::Single(_) => None,
        }
    }

    pub fn as_single(&self) -> Option<&TrainedModel> {
        match self {
            Serving::Single(m) => Some(m),
            Serving::Ensemble(_) => None,
        }
    }

    fn recommender(&self) -> &dyn Recommender {
        match self {
            Serving::Single(m) => m.as_ref(),
            Serving::Ensemble(e) => e,
        }
    }
}

impl Recommender for Serving {
    fn num_items(&self) -> usize {
        self.recommender().num_items()
    }
    fn knows_user(&self, user: usize) -> bool {
        self.recommender().knows_user(user)
    }
    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        self.recommender().score_items(user, out)
    }
    fn seen_items(&self, user: usize) -> &[usize] {
        match self {
            Serving::Single(m) => m.seen_items(user),
            Serving::Ensemble(e) => e.seen_items(user),
        }
    }
}

impl FeatureSource for Serving {
    fn feature_table(&self, user: usize) -> &EmbeddingTable {
        match self {
            Serving::Single(m) => m.feature_table(user),
            Serving::Ensemble(e) => e.feature_table(user),
        }
    }
}

/// Shared inputs of stage I and stage III.
#[derive(Debug, Clone)]
pub struct UnlearnContext {
    pub kind: ModelKind,
    pub train: Arc<InteractionSet>,
    pub valid: Arc<InteractionSet>,
    pub hyper: Hyperparams,
    pub num_shards: usize,
    pub seed: u64,
    /// Worker threads for shard retraining; 0 means `available_parallelism`.
    pub workers: usize,
    pub scif: ScifConfig,
    pub absent_shard: AbsentShard,
}

impl UnlearnContext {
    pub fn new(kind: ModelKind, train: InteractionSet, valid: InteractionSet, hyper: Hyperparams, seed: u64) -> Self {
        UnlearnContext {
            kind,
            train: Arc::new(train),
            valid: Arc::new(valid),
            hyper,
            num_shards: 10,
            seed,
            workers: 0,
            scif: ScifConfig::default(),
            absent_shard: AbsentShard::default(),
        }
    }

    /// Worker count actually used for `jobs` parallel jobs.
    pub fn effective_workers(&self, jobs: usize) -> usize {
        let avail = if self.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.workers
        };
        avail.min(jobs).max(1)
    }

    fn shard_seed(&self, shard: usize) -> u64 {
        rng::derive(self.seed, SHARD_SEED_STREAM + shard as u64)
    }
}

/// Optional artifacts shared across methods within one experiment.
#[derive(Debug, Clone, Default)]
pub struct SharedArtifacts {
    /// The full-data model shared by Retrain and SCIF.
    pub original: Option<(Arc<TrainedModel>, TrainLog)>,
    /// User embeddings used for collaboration-aware division.
    pub division_features: Option<Arc<EmbeddingTable>>,
}

/// Stage I result of one method.
#[derive(Debug, Clone)]
pub struct PreparedState {
    pub method: Method,
    pub serving: Serving,
    pub logs: Vec<TrainLog>,
    pub prepare_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub serving: Serving,
    pub wall_time_seconds: f64,
    pub shards_retrained: usize,
    pub shard_seconds: Vec<(usize, f64)>,
    pub aggregator_seconds: f64,
    pub workers: usize,
    pub influence: Option<InfluenceUpdate>,
}

impl UnlearnOutcome {
    /// Stage III time if every retrained shard had its own worker: the
    /// slowest shard plus everything that ran outside the shard jobs.
    pub fn critical_path_seconds(&self) -> f64 {
        if self.shard_seconds.is_empty() {
            return self.wall_time_seconds;
        }
        let total: f64 = self.shard_seconds.iter().map(|(_, t)| t).sum();
        let slowest = self.shard_seconds.iter().map(|(_, t)| *t).fold(0.0, f64::max);
        let serial = if self.workers <= 1 {
            (self.wall_time_seconds - total).max(0.0)
        } else {
            self.aggregator_seconds
        };
        slowest + serial
    }
}

/// Short WMF run over all training data whose user embeddings drive the
/// k-means and transport divisions.
pub fn division_features(train: &InteractionSet, hyper: &Hyperparams, seed: u64) -> Result<EmbeddingTable> {
    let m = model::train_fixed_epochs(
        ModelKind::Wmf,
        train,
        hyper,
        DIVISION_EPOCHS,
        rng::derive(seed, DIVISION_STREAM),
    )?;
    Ok(m.scoring_embeddings().clone())
}

fn untrained_model(ctx: &UnlearnContext, data: &InteractionSet, seed: u64) -> TrainedModel {
    let h = &ctx.hyper;
    let params = EmbeddingTable::random_normal(data.num_users, data.num_items, h.embedding_dim, h.init_std, seed);
    TrainedModel::new(ctx.kind, params, h.clone(), data)
}

type ShardJobResult = (usize, Result<(TrainedModel, Option<TrainLog>)>, f64);

/// Trains the listed shards on a pool of worker threads. Each shard
/// early-stops on the validation interactions of its own users.
fn train_shards(
    ctx: &UnlearnContext,
    plan: &ShardPlan,
    data: &[InteractionSet],
    shards: &[usize],
) -> (Vec<ShardJobResult>, usize) {
    let workers = ctx.effective_workers(shards.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<ShardJobResult>> = Mutex::new(Vec::new());
    let job = |s: usize| -> Result<(TrainedModel, Option<TrainLog>)> {
        let shard_data = &data[s];
        let seed = ctx.shard_seed(s);
        if shard_data.is_empty() {
            return Ok((untrained_model(ctx, shard_data, seed), None));
        }
        let valid = ctx.valid.filter_users(|u| plan.shard_of(u) == Some(s));
        let (m, log) = model::train(ctx.kind, shard_data, &valid, &ctx.hyper, seed)?;
        Ok((m, Some(log)))
    };
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&s) = shards.get(k) else { break };
                let t0 = Instant::now();
                let r = job(s);
                let dt = t0.elapsed().as_secs_f64();
                results.lock().expect("shard result lock").push((s, r, dt));
            });
        }
    });
    let mut out = results.into_inner().expect("shard result lock");
    out.sort_by_key(|(s, _, _)| *s);
    (out, workers)
}

fn shard_datasets(train: &InteractionSet, plan: &ShardPlan) -> Vec<InteractionSet> {
    (0..plan.num_shards)
        .map(|s| train.filter_users(|u| plan.shard_of(u) == Some(s)))
        .collect()
}

/// Stage I: trains the state each method starts unlearning from.
pub fn prepare(method: Method, ctx: &UnlearnContext, shared: &SharedArtifacts) -> Result<PreparedState> {
    let t0 = Instant::now();
    let (serving, logs) = match method {
        Method::Retrain | Method::Scif => {
            if method == Method::Scif && ctx.kind == ModelKind::LightGcn {
                return Err(Error::Unsupported("SCIF on LightGCN".into()));
            }
            let (m, log) = match &shared.original {
                Some((m, log)) => (Arc::clone(m), log.clone()),
                None => {
                    let (m, log) = model::train(ctx.kind, &ctx.train, &ctx.valid, &ctx.hyper, ctx.seed)?;
                    (Arc::new(m), log)
                }
            };
            (Serving::Single(m), vec![log])
        }
        Method::Sisa | Method::RecEraser | Method::UltraRe => {
            let mode = method.partition_mode().expect("sharded method");
            let users = ctx.train.active_users();
            let features = match (mode, &shared.division_features) {
                (PartitionMode::Random, _) => None,
                (_, Some(f)) => Some(Arc::clone(f)),
                (_, None) => Some(Arc::new(division_features(&ctx.train, &ctx.hyper, ctx.seed)?)),
            };
            let plan = balanced_partition(
                &users,
                ctx.train.num_users,
                ctx.num_shards,
                mode,
                features.as_deref(),
                rng::derive(ctx.seed, PARTITION_STREAM),
            )?;
            let data = shard_datasets(&ctx.train, &plan);
            let all: Vec<usize> = (0..plan.num_shards).collect();
            let (results, _) = train_shards(ctx, &plan, &data, &all);
            let mut submodels = Vec::with_capacity(plan.num_shards);
            let mut logs = Vec::new();
            for (_, r, _) in results {
                let (m, log) = r?;
                submodels.push(Arc::new(m));
                logs.extend(log);
            }
            let s = plan.num_shards;
            let mut ens =
                ShardEnsemble::new(plan, submodels, vec![1.0 / s as f64; s], data)?.with_absent(ctx.absent_shard);
            let w = fit_aggregator(
                &ens,
                &ctx.train,
                method.aggregator_mode(),
                rng::derive(ctx.seed, AGGREGATOR_STREAM),
            )?;
            ens.set_weights(w)?;
            (Serving::Ensemble(ens), logs)
        }
    };
    Ok(PreparedState {
        method,
        serving,
        logs,
        prepare_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Stage III: removes `request`'s users from the prepared state. Wall time
/// covers this call only.
pub fn unlearn(state: &PreparedState, ctx: &UnlearnContext, request: &UnlearnSet) -> Result<UnlearnOutcome> {
    let known = ctx.train.user_degrees();
    if let Some(&u) = request.users.iter().find(|&&u| u >= known.len() || known[u] == 0) {
        return Err(Error::UnknownUser(u));
    }
    let removed = |u: usize| request.contains_user(u);
    let t0 = Instant::now();
    match (state.method, &state.serving) {
        (Method::Retrain, Serving::Single(original)) => {
            if request.users.is_empty() {
                return Ok(no_op(state, t0));
            }
            let remaining = ctx.train.filter_users(|u| !removed(u));
            let (m, _) = model::train(original.kind, &remaining, &ctx.valid, &original.hyper, ctx.seed)?;
            Ok(UnlearnOutcome {
                serving: Serving::Single(Arc::new(m)),
                wall_time_seconds: t0.elapsed().as_secs_f64(),
                shards_retrained: 0,
                shard_seconds: Vec::new(),
                aggregator_seconds: 0.0,
                workers: 1,
                influence: None,
            })
        }
        (Method::Scif, Serving::Single(original)) => {
            let (m, update) = scif_influence_update(original, &ctx.train, request, &ctx.scif, ctx.seed)?;
            Ok(UnlearnOutcome {
                serving: Serving::Single(Arc::new(m)),
                wall_time_seconds: t0.elapsed().as_secs_f64(),
                shards_retrained: 0,
                shard_seconds: Vec::new(),
                aggregator_seconds: 0.0,
                workers: 1,
                influence: Some(update),
            })
        }
        (method, Serving::Ensemble(ens)) if method.is_sharded() => {
            let mut affected: Vec<usize> = request.users.iter().filter_map(|&u| ens.plan.shard_of(u)).collect();
            affected.sort_unstable();
            affected.dedup();
            if affected.is_empty() {
                return Ok(no_op(state, t0));
            }
            let mut data = ens.shard_data.clone();
            for &s in &affected {
                data[s] = data[s].filter_users(|u| !removed(u));
            }
            let (results, workers) = train_shards(ctx, &ens.plan, &data, &affected);
            let mut submodels = ens.submodels.clone();
            let mut shard_seconds = Vec::new();
            for (s, r, dt) in results {
                submodels[s] = Arc::new(r?.0);
                shard_seconds.push((s, dt));
            }
            let t_agg = Instant::now();
            let s = ens.num_shards();
            let mut new_ens =
                ShardEnsemble::new(ens.plan.clone(), submodels, vec![1.0 / s as f64; s], data)?.with_absent(ens.absent);
            let remainder = new_ens.remaining_data();
            let w = fit_aggregator(
                &new_ens,
                &remainder,
                method.aggregator_mode(),
                rng::derive(ctx.seed, AGGREGATOR_STREAM),
            )?;
            new_ens.set_weights(w)?;
            let aggregator_seconds = t_agg.elapsed().as_secs_f64();
            Ok(UnlearnOutcome {
                serving: Serving::Ensemble(new_ens),
                wall_time_seconds: t0.elapsed().as_secs_f64(),
                shards_retrained: affected.len(),
                shard_seconds,
                aggregator_seconds,
                workers,
                influence: None,
            })
        }
        (method, _) => Err(Error::invalid(format!("state was not prepared for {method}"))),
    }
}

fn no_op(state: &PreparedState, t0: Instant) -> UnlearnOutcome {
    UnlearnOutcome {
        serving: state.serving.clone(),
        wall_time_seconds: t0.elapsed().as_secs_f64(),
        shards_retrained: 0,
        shard_seconds: Vec::new(),
        aggregator_seconds: 0.0,
        workers: 1,
        influence: None,
    }
}
