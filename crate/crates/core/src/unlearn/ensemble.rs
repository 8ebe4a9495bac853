//! Shard ensembles: per-shard submodels combined by a weighted sum of scores.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_negatives_with, InteractionSet};
use crate::error::{Error, Result};
use crate::eval::FeatureSource;
use crate::model::{dot, EmbeddingTable, Recommender, TrainedModel};
use crate::rng;

use super::partition::ShardPlan;

pub const AGGREGATOR_EPOCHS: usize = 50;
pub const AGGREGATOR_LEARNING_RATE: f64 = 0.01;
pub const AGGREGATOR_BATCH: usize = 512;
pub const AGGREGATOR_SLICE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorMode {
    Uniform,
    Learned,
}

/// How a submodel that never saw a user takes part in that user's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbsentShard {
    /// The submodel abstains; weights are renormalised over the submodels
    /// that know the user.
    #[default]
    Abstain,
    /// The submodel contributes its item-popularity prior: the mean of its
    /// users' embeddings dotted with each item vector.
    Prior,
}

#[derive(Debug, Clone)]
pub struct ShardEnsemble {
    pub plan: ShardPlan,
    pub submodels: Vec<Arc<TrainedModel>>,
    pub weights: Vec<f64>,
    /// Training interactions of each shard.
    pub shard_data: Vec<InteractionSet>,
    pub absent: AbsentShard,
    /// Per shard: mean user embedding dotted with every item vector.
    prior_scores: Vec<Vec<f64>>,
    pooled_prior: Vec<f64>,
    seen: Arc<Vec<Vec<usize>>>,
}

impl ShardEnsemble {
    pub fn new(
        plan: ShardPlan,
        submodels: Vec<Arc<TrainedModel>>,
        weights: Vec<f64>,
        shard_data: Vec<InteractionSet>,
    ) -> Result<Self> {
        if submodels.is_empty() || submodels.len() != plan.num_shards || shard_data.len() != plan.num_shards {
            return Err(Error::invalid("ensemble needs one submodel and data set per shard"));
        }
        check_weights(&weights, submodels.len())?;
        let prior_scores = submodels
            .iter()
            .zip(&shard_data)
            .map(|(m, data)| shard_prior(m, data))
            .collect();
        let (nu, ni) = (shard_data[0].num_users, shard_data[0].num_items);
        let mut seen = vec![Vec::new(); nu];
        for data in &shard_data {
            for &(u, i) in &data.interactions {
                seen[u].push(i);
            }
        }
        seen.iter_mut().for_each(|s| s.sort_unstable());
        let mut e = ShardEnsemble {
            plan,
            submodels,
            weights,
            shard_data,
            absent: AbsentShard::default(),
            prior_scores,
            pooled_prior: vec![0.0; ni],
            seen: Arc::new(seen),
        };
        e.refresh_pooled_prior();
        Ok(e)
    }

    pub fn with_absent(mut self, absent: AbsentShard) -> Self {
        self.absent = absent;
        self
    }

    pub fn num_shards(&self) -> usize {
        self.submodels.len()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_weights(&weights, self.num_shards())?;
        self.weights = weights;
        self.refresh_pooled_prior();
        Ok(())
    }

    fn refresh_pooled_prior(&mut self) {
        let ni = self.pooled_prior.len();
        let mut pooled = vec![0.0; ni];
        for (w, prior) in self.weights.iter().zip(&self.prior_scores) {
            for (p, x) in pooled.iter_mut().zip(prior) {
                *p += w * x;
            }
        }
        self.pooled_prior = pooled;
    }

    /// Score of one shard: the submodel's own score for its users; for
    /// everyone else the popularity prior, or `None` when absent shards
    /// abstain.
    pub fn shard_score(&self, shard: usize, user: usize, item: usize) -> Option<f64> {
        let m = &self.submodels[shard];
        if m.knows_user(user) {
            Some(m.score(user, item))
        } else {
            match self.absent {
                AbsentShard::Abstain => None,
                AbsentShard::Prior => Some(self.prior_scores[shard][item]),
            }
        }
    }

    /// Total weight of the shards that score `user`.
    fn weight_mass(&self, user: usize) -> f64 {
        match self.absent {
            AbsentShard::Prior => 1.0,
            AbsentShard::Abstain => self
                .submodels
                .iter()
                .zip(&self.weights)
                .filter(|(m, _)| m.knows_user(user))
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// All interactions the ensemble was trained on.
    pub fn remaining_data(&self) -> InteractionSet {
        let mut all: Vec<(usize, usize)> = self
            .shard_data
            .iter()
            .flat_map(|d| d.interactions.iter().copied())
            .collect();
        all.sort_unstable();
        self.shard_data[0].with_interactions(all)
    }
}

fn check_weights(weights: &[f64], shards: usize) -> Result<()> {
    if weights.len() != shards {
        return Err(Error::DimensionMismatch {
            expected: shards,
            got: weights.len(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "aggregator weights {weights:?} not on the simplex"
        )));
    }
    Ok(())
}

fn shard_prior(m: &TrainedModel, data: &InteractionSet) -> Vec<f64> {
    let emb = m.scoring_embeddings();
    let mean = emb.mean_user(&data.active_users());
    (0..emb.num_items).map(|i| dot(&mean, emb.item(i))).collect()
}

/// `sum_s w_s * score_s(user, item)` over the shards that score the user,
/// divided by their total weight. Users no shard knows get the pooled prior.
pub fn aggregate_score(ensemble: &ShardEnsemble, user: usize, item: usize) -> f64 {
    let mass = ensemble.weight_mass(user);
    if !(mass > 0.0) {
        return ensemble.pooled_prior[item];
    }
    let total: f64 = (0..ensemble.num_shards())
        .filter_map(|s| ensemble.shard_score(s, user, item).map(|x| ensemble.weights[s] * x))
        .sum();
    total / mass
}

impl Recommender for ShardEnsemble {
    fn num_items(&self) -> usize {
        self.pooled_prior.len()
    }

    fn knows_user(&self, user: usize) -> bool {
        self.submodels.iter().any(|m| m.knows_user(user))
    }

    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        if user >= self.seen.len() {
            return Err(Error::UnknownUser(user));
        }
        let mass = self.weight_mass(user);
        if !(mass > 0.0) {
            out.copy_from_slice(&self.pooled_prior);
            return Ok(());
        }
        match self.absent {
            AbsentShard::Prior => out.copy_from_slice(&self.pooled_prior),
            AbsentShard::Abstain => out.iter_mut().for_each(|o| *o = 0.0),
        }
        for (s, m) in self.submodels.iter().enumerate() {
            if !m.knows_user(user) {
                continue;
            }
            let w = self.weights[s];
            let emb = m.scoring_embeddings();
            let u = emb.user(user);
            let prior = match self.absent {
                AbsentShard::Prior => Some(&self.prior_scores[s]),
                AbsentShard::Abstain => None,
            };
            for (i, o) in out.iter_mut().enumerate() {
                *o += w * (dot(u, emb.item(i)) - prior.map_or(0.0, |p| p[i]));
            }
        }
        if mass != 1.0 {
            out.iter_mut().for_each(|o| *o /= mass);
        }
        Ok(())
    }

    fn seen_items(&self, user: usize) -> &[usize] {
        self.seen.get(user).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl FeatureSource for ShardEnsemble {
    fn feature_table(&self, user: usize) -> &EmbeddingTable {
        let s = self.plan.shard_of(user).unwrap_or(user % self.num_shards());
        self.submodels[s].scoring_embeddings()
    }
}

fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Learns softmax-parameterised weights minimising the pairwise logistic
/// loss of the aggregated score. `diffs[k][s]` is shard `s`'s score margin
/// `score_s(u, pos) - score_s(u, neg)` for training pair `k`, `None` where
/// the shard abstains. Gradients are averaged over each mini-batch.
pub fn fit_weights_from_diffs(diffs: &[Vec<Option<f64>>], num_shards: usize, seed: u64) -> Vec<f64> {
    let mut logits = vec![0.0; num_shards];
    if diffs.is_empty() || num_shards == 1 {
        return softmax(&logits);
    }
    let mut rng = rng::rng(seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut grad = vec![0.0; num_shards];
    for _ in 0..AGGREGATOR_EPOCHS {
        order.shuffle(&mut rng);
        for chunk in order.chunks(AGGREGATOR_BATCH) {
            let w = softmax(&logits);
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in chunk {
                let d = &diffs[k];
                let mass: f64 = w.iter().zip(d).filter(|(_, x)| x.is_some()).map(|(a, _)| a).sum();
                if !(mass > 0.0) {
                    continue;
                }
                let x = w.iter().zip(d).filter_map(|(a, b)| b.map(|b| a * b)).sum::<f64>() / mass;
                // d/dx of -ln sigmoid(x)
                let dl = -1.0 / (1.0 + x.exp());
                for s in 0..num_shards {
                    if let Some(ds) = d[s] {
                        grad[s] += dl * w[s] * (ds - x) / mass;
                    }
                }
            }
            let scale = AGGREGATOR_LEARNING_RATE / chunk.len() as f64;
            for (l, g) in logits.iter_mut().zip(&grad) {
                *l -= scale * g;
            }
        }
    }
    softmax(&logits)
}

/// Fits aggregator weights on a seeded 10% slice of `remainder`, pairing
/// each sampled positive with one uniformly drawn negative.
pub fn fit_aggregator(
    ensemble: &ShardEnsemble,
    remainder: &InteractionSet,
    mode: AggregatorMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let s = ensemble.num_shards();
    if s == 0 {
        return Err(Error::invalid("no submodels to aggregate"));
    }
    if mode == AggregatorMode::Uniform || s == 1 || remainder.is_empty() {
        return Ok(vec![1.0 / s as f64; s]);
    }
    let mut rng = rng::derived_rng(seed, 1);
    let mut idx: Vec<usize> = (0..remainder.len()).collect();
    idx.shuffle(&mut rng);
    let take = ((remainder.len() as f64 * AGGREGATOR_SLICE).round() as usize).max(1);
    idx.truncate(take);
    idx.sort_unstable();
    let negs = sample_negatives_with(remainder, &remainder.user_items(), 1, rng::derive(seed, 2));
    let diffs: Vec<Vec<Option<f64>>> = idx
        .iter()
        .filter_map(|&k| {
            let (u, i) = remainder.interactions[k];
            let j = *negs.negatives[k].first()?;
            Some(
                (0..s)
                    .map(|sh| Some(ensemble.shard_score(sh, u, i)? - ensemble.shard_score(sh, u, j)?))
                    .collect(),
            )
        })
        .collect();
    Ok(fit_weights_from_diffs(&diffs, s, rng::derive(seed, 3)))
}
