//! Group fairness between active and inactive users, and spread of shard
//! quality.

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::model::Recommender;

use super::ranking::{mean, per_user_metrics, per_user_metrics_excluding, UserMetrics};

/// Fraction of remaining users labelled active.
pub const ACTIVE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    /// Sorted.
    pub active: Vec<usize>,
    /// Sorted.
    pub inactive: Vec<usize>,
}

impl GroupAssignment {
    /// The top `ceil(fraction * n)` users of `candidates` by training degree
    /// are active, ties broken towards the lower index.
    pub fn by_activity(train: &InteractionSet, candidates: &[usize], fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!("active fraction {fraction} outside [0, 1]")));
        }
        let deg = train.user_degrees();
        let mut order: Vec<usize> = candidates.to_vec();
        order.sort_unstable();
        order.dedup();
        order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
        let n_active = (fraction * order.len() as f64).ceil() as usize;
        let mut active = order[..n_active.min(order.len())].to_vec();
        let mut inactive = order[n_active.min(order.len())..].to_vec();
        active.sort_unstable();
        inactive.sort_unstable();
        Ok(GroupAssignment { active, inactive })
    }
}

/// Mean NDCG of active users minus mean NDCG of inactive users, computed
/// from per-user metrics. Users absent from `metrics` are skipped.
pub fn a_igf_from(metrics: &[UserMetrics], groups: &GroupAssignment) -> Result<f64> {
    let pick = |grp: &[usize], name: &str| -> Result<f64> {
        let vals: Vec<f64> = metrics
            .iter()
            .filter(|m| grp.binary_search(&m.user).is_ok())
            .map(|m| m.ndcg)
            .collect();
        if vals.is_empty() {
            return Err(Error::invalid(format!("{name} group has no evaluable users")));
        }
        Ok(mean(vals))
    };
    Ok(pick(&groups.active, "active")? - pick(&groups.inactive, "inactive")?)
}

pub fn a_igf<R: Recommender + ?Sized>(m: &R, test: &InteractionSet, k: usize, groups: &GroupAssignment) -> Result<f64> {
    a_igf_from(&per_user_metrics(m, test, k), groups)
}

/// Population variance; 0 for fewer than one value.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mu = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64
}

/// Variance across shards of each submodel's NDCG@k on its own users' test
/// interactions, optionally masking `history` items. Returns the variance
/// and the shards skipped for having no evaluable test users.
pub fn shard_gf<M, R>(
    submodels: &[M],
    shard_tests: &[InteractionSet],
    k: usize,
    history: Option<&InteractionSet>,
) -> Result<(f64, Vec<usize>)>
where
    M: std::ops::Deref<Target = R>,
    R: Recommender + ?Sized,
{
    if submodels.len() != shard_tests.len() {
        return Err(Error::DimensionMismatch {
            expected: submodels.len(),
            got: shard_tests.len(),
        });
    }
    if submodels.is_empty() {
        return Err(Error::invalid("no shards"));
    }
    let mut per = Vec::new();
    let mut skipped = Vec::new();
    for (s, (m, t)) in submodels.iter().zip(shard_tests).enumerate() {
        let users = match history {
            Some(h) => per_user_metrics_excluding(&**m, t, k, h),
            None => per_user_metrics(&**m, t, k),
        };
        if users.is_empty() {
            skipped.push(s);
        } else {
            per.push(mean(users.iter().map(|u| u.ndcg)));
        }
    }
    Ok((population_variance(&per), skipped))
}
