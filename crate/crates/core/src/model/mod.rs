//! Collaborative-filtering models: WMF, BPR-MF and LightGCN over a shared
//! embedding table.

mod checkpoint;
mod lightgcn;
mod loss;
mod train;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use lightgcn::Propagator;
pub use loss::{hessian_vector_product, loss_grad, loss_value, Batch, Objective, PairTerm, ParamSubset, PointTerm};
pub use train::{train, train_fixed_epochs, validate, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Wmf,
    Bpr,
    #[serde(rename = "lightgcn")]
    LightGcn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Wmf => "wmf",
            ModelKind::Bpr => "bpr",
            ModelKind::LightGcn => "lightgcn",
        }
    }

    /// Pointwise squared loss (WMF) vs pairwise logistic loss (BPR, LightGCN).
    pub fn is_pointwise(self) -> bool {
        matches!(self, ModelKind::Wmf)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wmf" => Ok(ModelKind::Wmf),
            "bpr" => Ok(ModelKind::Bpr),
            "lightgcn" => Ok(ModelKind::LightGcn),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub negatives_per_positive: usize,
    /// Weight of sampled (or, in dense mode, all) missing entries in WMF.
    pub wmf_negative_weight: f64,
    /// Use every missing entry instead of sampled negatives (tiny data only).
    pub wmf_dense: bool,
    pub lightgcn_layers: usize,
    pub l2_reg: f64,
    pub init_std: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embedding_dim: 32,
            batch_size: 512,
            learning_rate: 0.01,
            max_epochs: 500,
            patience: 5,
            negatives_per_positive: 4,
            wmf_negative_weight: 0.1,
            wmf_dense: false,
            lightgcn_layers: 2,
            l2_reg: 1e-4,
            init_std: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("embedding_dim", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("negatives_per_positive", self.negatives_per_positive),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.wmf_negative_weight > 0.0 && self.wmf_negative_weight <= 1.0) {
            return Err(Error::invalid("wmf_negative_weight must be in (0, 1]"));
        }
        if !(self.l2_reg >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::invalid("l2_reg and init_std must be >= 0"));
        }
        Ok(())
    }
}

/// Row-major user and item embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub user_vecs: Vec<f64>,
    pub item_vecs: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            num_users,
            num_items,
            user_vecs: vec![0.0; num_users * dim],
            item_vecs: vec![0.0; num_items * dim],
        }
    }

    /// Entries drawn from N(0, std^2); users first, then items.
    pub fn random_normal(num_users: usize, num_items: usize, dim: usize, std: f64, seed: u64) -> Self {
        let mut t = Self::zeros(num_users, num_items, dim);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            let mut rng = rng::rng(seed);
            for x in t.user_vecs.iter_mut().chain(t.item_vecs.iter_mut()) {
                *x = normal.sample(&mut rng);
            }
        }
        t
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_vecs[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_vecs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn user_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.user_vecs[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.item_vecs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user(u), self.item(i))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim && self.num_users == other.num_users && self.num_items == other.num_items
    }

    pub fn is_finite(&self) -> bool {
        self.user_vecs.iter().chain(&self.item_vecs).all(|x| x.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.user_vecs.iter_mut().zip(&other.user_vecs) {
            *a += alpha * b;
        }
        for (a, b) in self.item_vecs.iter_mut().zip(&other.item_vecs) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.user_vecs.iter_mut().chain(self.item_vecs.iter_mut()) {
            *x *= alpha;
        }
    }

    /// Mean user vector over `users`; zero when empty.
    pub fn mean_user(&self, users: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if users.is_empty() {
            return m;
        }
        for &u in users {
            for (a, b) in m.iter_mut().zip(self.user(u)) {
                *a += b;
            }
        }
        let n = users.len() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Anything that can rank the catalog for a user.
pub trait Recommender: Send + Sync {
    fn num_items(&self) -> usize;

    /// Whether the model was trained on at least one interaction of `user`.
    fn knows_user(&self, user: usize) -> bool;

    /// Writes scores of every item for `user` into `out`.
    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()>;

    /// Items the user interacted with in the model's training data, sorted.
    fn seen_items(&self, user: usize) -> &[usize];
}

/// A trained model: raw parameters plus the embeddings used for scoring
/// (equal to the parameters for MF models, propagated for LightGCN).
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub params: EmbeddingTable,
    pub hyper: Hyperparams,
    scoring: EmbeddingTable,
    propagator: Option<Arc<Propagator>>,
    seen: Arc<Vec<Vec<usize>>>,
    train_size: usize,
}

impl TrainedModel {
    pub fn new(kind: ModelKind, params: EmbeddingTable, hyper: Hyperparams, train: &InteractionSet) -> Self {
        let propagator = match kind {
            ModelKind::LightGcn => Some(Arc::new(Propagator::new(train, hyper.lightgcn_layers))),
            _ => None,
        };
        Self::with_parts(
            kind,
            params,
            hyper,
            propagator,
            Arc::new(train.user_items()),
            train.len(),
        )
    }

    pub(crate) fn with_parts(
        kind: ModelKind,
        params: EmbeddingTable,
        hyper: Hyperparams,
        propagator: Option<Arc<Propagator>>,
        seen: Arc<Vec<Vec<usize>>>,
        train_size: usize,
    ) -> Self {
        let scoring = match &propagator {
            Some(p) => p.propagate(&params),
            None => params.clone(),
        };
        TrainedModel {
            kind,
            params,
            hyper,
            scoring,
            propagator,
            seen,
            train_size,
        }
    }

    /// Same training data and kind, different parameters.
    pub fn with_params(&self, params: EmbeddingTable) -> Self {
        Self::with_parts(
            self.kind,
            params,
            self.hyper.clone(),
            self.propagator.clone(),
            Arc::clone(&self.seen),
            self.train_size,
        )
    }

    /// Embeddings used by the scoring rule.
    pub fn scoring_embeddings(&self) -> &EmbeddingTable {
        &self.scoring
    }

    pub fn propagator(&self) -> Option<&Propagator> {
        self.propagator.as_deref()
    }

    pub fn num_users(&self) -> usize {
        self.params.num_users
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.scoring.score(user, item)
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective {
            kind: self.kind,
            l2: self.hyper.l2_reg,
            propagator: self.propagator(),
        }
    }
}

impl Recommender for TrainedModel {
    fn num_items(&self) -> usize {
        self.params.num_items
    }

    fn knows_user(&self, user: usize) -> bool {
        self.seen.get(user).is_some_and(|s| !s.is_empty())
    }

    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        if user >= self.scoring.num_users {
            return Err(Error::UnknownUser(user));
        }
        let u = self.scoring.user(user);
        for (i, o) in out.iter_mut().enumerate().take(self.scoring.num_items) {
            *o = dot(u, self.scoring.item(i));
        }
        Ok(())
    }

    fn seen_items(&self, user: usize) -> &[usize] {
        self.seen.get(user).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Top-`k` items by descending score, skipping `exclude` (sorted). Ties go to
/// the lower item index.
pub fn top_k(scores: &[f64], k: usize, exclude: &[usize]) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand
}

/// Ranked recommendation list for a user who has a trained embedding.
pub fn score_topk<R: Recommender + ?Sized>(m: &R, user: usize, k: usize, exclude: &[usize]) -> Result<Vec<usize>> {
    if !m.knows_user(user) {
        return Err(Error::UnknownUser(user));
    }
    let mut scores = vec![0.0; m.num_items()];
    m.score_items(user, &mut scores)?;
    let mut ex = exclude.to_vec();
    ex.sort_unstable();
    Ok(top_k(&scores, k, &ex))
}
