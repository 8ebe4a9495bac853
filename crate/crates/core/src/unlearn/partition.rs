//! Balanced user partitions for sharded training.
//!
//! Every mode fills shards to exact capacities `floor(n/S)` or `ceil(n/S)`
//! (the first `n mod S` shards take the extra user).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingTable;
use crate::rng;

pub const KMEANS_ITERATIONS: usize = 20;
pub const SINKHORN_EPSILON: f64 = 0.05;
pub const SINKHORN_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Random,
    BalancedKmeans,
    BalancedOt,
}

impl PartitionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionMode::Random => "random",
            PartitionMode::BalancedKmeans => "balanced_kmeans",
            PartitionMode::BalancedOt => "balanced_ot",
        }
    }
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartitionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PartitionMode::Random),
            "balanced_kmeans" | "kmeans" => Ok(PartitionMode::BalancedKmeans),
            "balanced_ot" | "ot" => Ok(PartitionMode::BalancedOt),
            other => Err(Error::invalid(format!("unknown partition mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub num_shards: usize,
    /// Shard of each user index; `None` for users outside the partition.
    pub assignment: Vec<Option<usize>>,
    pub mode: PartitionMode,
}

impl ShardPlan {
    pub fn shard_of(&self, user: usize) -> Option<usize> {
        self.assignment.get(user).copied().flatten()
    }

    /// Ascending user indices of each shard.
    pub fn shard_users(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_shards];
        for (u, s) in self.assignment.iter().enumerate() {
            if let Some(s) = s {
                out[*s].push(u);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_shards];
        for s in self.assignment.iter().flatten() {
            out[*s] += 1;
        }
        out
    }
}

fn capacities(n: usize, s: usize) -> Vec<usize> {
    (0..s).map(|k| n / s + usize::from(k < n % s)).collect()
}

/// Splits `users` into `num_shards` balanced shards.
///
/// `features` must hold one row per user index for the k-means and
/// transport modes; `num_users` sizes the returned assignment vector.
pub fn balanced_partition(
    users: &[usize],
    num_users: usize,
    num_shards: usize,
    mode: PartitionMode,
    features: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<ShardPlan> {
    let n = users.len();
    if num_shards == 0 {
        return Err(Error::invalid("number of shards must be >= 1"));
    }
    if num_shards > n {
        return Err(Error::invalid(format!("{num_shards} shards for only {n} users")));
    }
    if let Some(&u) = users.iter().find(|&&u| u >= num_users) {
        return Err(Error::UnknownUser(u));
    }
    let caps = capacities(n, num_shards);
    let local = match mode {
        PartitionMode::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::rng(seed));
            let mut a = vec![0; n];
            for (pos, &k) in order.iter().enumerate() {
                a[k] = pos % num_shards;
            }
            a
        }
        PartitionMode::BalancedKmeans | PartitionMode::BalancedOt => {
            let table = features.ok_or_else(|| Error::invalid(format!("{mode} partition needs user features")))?;
            if users.iter().any(|&u| u >= table.num_users) {
                return Err(Error::invalid("feature table smaller than user index space"));
            }
            let points: Vec<&[f64]> = users.iter().map(|&u| table.user(u)).collect();
            if mode == PartitionMode::BalancedKmeans {
                balanced_kmeans(&points, &caps, seed)
            } else {
                balanced_ot(&points, &caps, seed)
            }
        }
    };
    let mut assignment = vec![None; num_users];
    for (k, &u) in users.iter().enumerate() {
        assignment[u] = Some(local[k]);
    }
    Ok(ShardPlan {
        num_shards,
        assignment,
        mode,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(points: &[&[f64]], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (idx, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = idx;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn cost_matrix(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| centroids.iter().map(|c| sq_dist(p, c)).collect())
        .collect()
}

/// Assigns (point, shard) pairs in ascending cost order, skipping full shards.
fn greedy_capacity_assign(cost: &[Vec<f64>], caps: &[usize]) -> Vec<usize> {
    let n = cost.len();
    let s = caps.len();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|p| (0..s).map(move |c| (p, c))).collect();
    pairs.sort_by(|a, b| cost[a.0][a.1].total_cmp(&cost[b.0][b.1]).then(a.cmp(b)));
    let mut left = caps.to_vec();
    let mut out = vec![usize::MAX; n];
    let mut done = 0;
    for (p, c) in pairs {
        if out[p] == usize::MAX && left[c] > 0 {
            out[p] = c;
            left[c] -= 1;
            done += 1;
            if done == n {
                break;
            }
        }
    }
    out
}

fn update_centroids(points: &[&[f64]], assign: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(assign) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (c, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
        if n > 0 {
            centroids[c] = sum.into_iter().map(|x| x / n as f64).collect();
        }
    }
}

fn balanced_kmeans(points: &[&[f64]], caps: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = rng::rng(seed);
    let mut centroids = kmeans_pp(points, caps.len(), &mut rng);
    let mut assign = Vec::new();
    for _ in 0..KMEANS_ITERATIONS {
        assign = greedy_capacity_assign(&cost_matrix(points, &centroids), caps);
        update_centroids(points, &assign, &mut centroids);
    }
    assign
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn between uniform point mass and shard capacities.
/// Returns the transport plan (rows: points, cols: shards).
pub fn sinkhorn_plan(cost: &[Vec<f64>], caps: &[usize], epsilon: f64, iterations: usize) -> Vec<Vec<f64>> {
    let n = cost.len();
    let s = caps.len();
    let total: usize = caps.iter().sum();
    let log_a = -(n as f64).ln();
    let log_b: Vec<f64> = caps.iter().map(|&c| (c as f64 / total as f64).ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; s];
    for _ in 0..iterations {
        for p in 0..n {
            f[p] = epsilon * (log_a - logsumexp((0..s).map(|c| (g[c] - cost[p][c]) / epsilon)));
        }
        for c in 0..s {
            g[c] = epsilon * (log_b[c] - logsumexp((0..n).map(|p| (f[p] - cost[p][c]) / epsilon)));
        }
    }
    (0..n)
        .map(|p| (0..s).map(|c| ((f[p] + g[c] - cost[p][c]) / epsilon).exp()).collect())
        .collect()
}

/// Row-wise argmax of the plan; rows are placed in order of decreasing
/// confidence and fall back to their next-best shard once a shard is full.
fn repair_plan(plan: &[Vec<f64>], caps: &[usize]) -> Vec<usize> {
    let n = plan.len();
    let row_max = |p: usize| plan[p].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| row_max(b).total_cmp(&row_max(a)).then(a.cmp(&b)));
    let mut left = caps.to_vec();
    let mut out = vec![0; n];
    for p in order {
        let mut prefs: Vec<usize> = (0..caps.len()).collect();
        prefs.sort_by(|&a, &b| plan[p][b].total_cmp(&plan[p][a]).then(a.cmp(&b)));
        let c = prefs
            .into_iter()
            .find(|&c| left[c] > 0)
            .expect("capacities sum to the number of points");
        left[c] -= 1;
        out[p] = c;
    }
    out
}

fn balanced_ot(points: &[&[f64]], caps: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = rng::rng(seed);
    let mut centroids = kmeans_pp(points, caps.len(), &mut rng);
    let dim = points[0].len();
    let mut assign = Vec::new();
    for _ in 0..KMEANS_ITERATIONS {
        let cost = cost_matrix(points, &centroids);
        let plan = sinkhorn_plan(&cost, caps, SINKHORN_EPSILON, SINKHORN_ITERATIONS);
        assign = repair_plan(&plan, caps);
        // Plan-weighted centroids.
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mass: f64 = plan.iter().map(|row| row[c]).sum();
            if mass <= 0.0 {
                continue;
            }
            let mut acc = vec![0.0; dim];
            for (row, p) in plan.iter().zip(points) {
                for (a, x) in acc.iter_mut().zip(p.iter()) {
                    *a += row[c] * x;
                }
            }
            *centroid = acc.into_iter().map(|x| x / mass).collect();
        }
    }
    assign
}
