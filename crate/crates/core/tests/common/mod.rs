//! Independent reference implementations and seeded instance generators
//! shared by the property suites and the acceptance binary.

#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use recforget::dataset::InteractionSet;
use recforget::eval::{self, a_igf_from, mio_accuracy, shard_gf, GroupAssignment, MembershipClassifier, UserMetrics};
use recforget::graph::{BipartiteGraph, Node, Strategy, UnlearnSet};
use recforget::model::{
    Batch, EmbeddingTable, Hyperparams, ModelKind, Objective, ParamSubset, Propagator, Recommender, TrainedModel,
};
use recforget::rng;
use recforget::unlearn::{
    self, balanced_partition, fit_weights_from_diffs, scif_influence_update, Method, PartitionMode, ScifConfig,
    SharedArtifacts, UnlearnContext,
};

pub const MODEL_KINDS: [ModelKind; 3] = [ModelKind::Wmf, ModelKind::Bpr, ModelKind::LightGcn];

/// Random interactions over `nu x ni` where every user has at least one item.
pub fn random_interactions(seed: u64, nu: usize, ni: usize, density: f64) -> InteractionSet {
    let mut r = rng::rng(seed);
    let mut pairs = Vec::new();
    for u in 0..nu {
        pairs.push((u, r.gen_range(0..ni)));
        for i in 0..ni {
            if r.gen_bool(density) {
                pairs.push((u, i));
            }
        }
    }
    InteractionSet::from_pairs(pairs, nu, ni).unwrap()
}

fn sampled_batch(kind: ModelKind, train: &InteractionSet, seed: u64) -> Batch {
    let mut r = rng::rng(seed);
    let negs: Vec<Vec<usize>> = train
        .interactions
        .iter()
        .map(|_| (0..2).map(|_| r.gen_range(0..train.num_items)).collect())
        .collect();
    Batch::from_samples(
        kind,
        train
            .interactions
            .iter()
            .zip(&negs)
            .map(|(&(u, i), n)| (u, i, n.as_slice())),
        0.3,
    )
}

fn flat(t: &EmbeddingTable) -> Vec<f64> {
    let mut v = Vec::new();
    for u in 0..t.num_users {
        v.extend_from_slice(t.user(u));
    }
    for i in 0..t.num_items {
        v.extend_from_slice(t.item(i));
    }
    v
}

fn unflat(v: &[f64], nu: usize, ni: usize, d: usize) -> EmbeddingTable {
    let mut t = EmbeddingTable::zeros(nu, ni, d);
    for u in 0..nu {
        t.user_mut(u).copy_from_slice(&v[u * d..(u + 1) * d]);
    }
    for i in 0..ni {
        let o = (nu + i) * d;
        t.item_mut(i).copy_from_slice(&v[o..o + d]);
    }
    t
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

pub struct SmallProblem {
    pub train: InteractionSet,
    pub params: EmbeddingTable,
    pub batch: Batch,
    pub propagator: Option<Propagator>,
}

impl SmallProblem {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        let mut r = rng::derived_rng(seed, 7);
        let nu = r.gen_range(3..7);
        let ni = r.gen_range(4..9);
        let d = r.gen_range(2..5);
        let train = random_interactions(seed, nu, ni, 0.35);
        let params = EmbeddingTable::random_normal(nu, ni, d, 0.5, rng::derive(seed, 8));
        let batch = sampled_batch(kind, &train, rng::derive(seed, 9));
        let propagator = (kind == ModelKind::LightGcn).then(|| Propagator::new(&train, 2));
        SmallProblem {
            train,
            params,
            batch,
            propagator,
        }
    }

    pub fn objective(&self, kind: ModelKind) -> Objective<'_> {
        Objective {
            kind,
            l2: 0.05,
            propagator: self.propagator.as_ref(),
        }
    }
}

/// Relative error between the analytic gradient and central differences.
pub fn gradient_error(kind: ModelKind, seed: u64) -> f64 {
    let p = SmallProblem::new(kind, seed);
    let obj = p.objective(kind);
    let (_, g) = obj.grad(&p.params, &p.batch).unwrap();
    let x = flat(&p.params);
    let (nu, ni, d) = (p.params.num_users, p.params.num_items, p.params.dim);
    let h = 1e-5;
    let fd: Vec<f64> = (0..x.len())
        .map(|k| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let lp = obj.loss(&unflat(&xp, nu, ni, d), &p.batch).unwrap();
            let lm = obj.loss(&unflat(&xm, nu, ni, d), &p.batch).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect();
    rel_err(&flat(&g), &fd)
}

/// Returns the relative error of the restricted HVP against finite
/// differences of the gradient and `|v'Hw - w'Hv|`.
pub fn hvp_errors(kind: ModelKind, seed: u64) -> (f64, f64) {
    let p = SmallProblem::new(kind, seed);
    let obj = p.objective(kind);
    let (nu, ni, d) = (p.params.num_users, p.params.num_items, p.params.dim);
    let mut r = rng::derived_rng(seed, 10);
    let mut users: Vec<usize> = (0..nu).filter(|_| r.gen_bool(0.7)).collect();
    let mut items: Vec<usize> = (0..ni).filter(|_| r.gen_bool(0.7)).collect();
    if users.is_empty() {
        users.push(0);
    }
    if items.is_empty() {
        items.push(0);
    }
    let subset = ParamSubset::new(users, items, nu, ni);
    let n = subset.flat_len(d);
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();

    let hv = obj.hvp(&p.params, &p.batch, &subset, &v, 0.0).unwrap();
    let hw = obj.hvp(&p.params, &p.batch, &subset, &w, 0.0).unwrap();

    let h = 1e-5;
    let dir = subset.scatter(&v, nu, ni, d);
    let mut plus = p.params.clone();
    plus.axpy(h, &dir);
    let mut minus = p.params.clone();
    minus.axpy(-h, &dir);
    let (_, gp) = obj.grad(&plus, &p.batch).unwrap();
    let (_, gm) = obj.grad(&minus, &p.batch).unwrap();
    let fd: Vec<f64> = subset
        .gather(&gp)
        .iter()
        .zip(subset.gather(&gm))
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();

    let dotv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (rel_err(&hv, &fd), (dotv(&v, &hw) - dotv(&w, &hv)).abs())
}

/// Random bipartite graph with isolated nodes on both sides allowed.
pub fn random_graph(seed: u64) -> InteractionSet {
    let mut r = rng::rng(seed);
    let nu = r.gen_range(1..25);
    let ni = r.gen_range(1..25);
    let density = r.gen_range(0.0..0.6);
    let pairs: Vec<(usize, usize)> = (0..nu)
        .flat_map(|u| (0..ni).map(move |i| (u, i)))
        .filter(|_| r.gen_bool(density))
        .collect();
    InteractionSet::from_pairs(pairs, nu, ni).unwrap()
}

/// Largest relative deviation of node importance from a recount over the
/// raw edge list.
pub fn importance_error(seed: u64) -> f64 {
    let set = random_graph(seed);
    let g = BipartiteGraph::build(&set);
    let edges = &set.interactions;
    let brute = |is_user: bool, x: usize| -> f64 {
        let mine: Vec<usize> = edges
            .iter()
            .filter(|&&(u, i)| if is_user { u == x } else { i == x })
            .map(|&(u, i)| if is_user { i } else { u })
            .collect();
        if mine.is_empty() {
            return 0.0;
        }
        let neighbour_degrees: usize = mine
            .iter()
            .map(|&y| {
                edges
                    .iter()
                    .filter(|&&(u, i)| if is_user { i == y } else { u == y })
                    .count()
            })
            .sum();
        mine.len() as f64 * (neighbour_degrees as f64 / mine.len() as f64)
    };
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    };
    let mut worst = 0.0f64;
    for u in 0..set.num_users {
        let got = g.importance(Node::User(u)).unwrap().importance;
        worst = worst.max(rel(got, brute(true, u)));
    }
    for i in 0..set.num_items {
        let got = g.importance(Node::Item(i)).unwrap().importance;
        worst = worst.max(rel(got, brute(false, i)));
    }
    worst
}

/// A recommender backed by an explicit score matrix.
pub struct ScoreTable {
    pub scores: Vec<Vec<f64>>,
    pub seen: Vec<Vec<usize>>,
}

impl Recommender for ScoreTable {
    fn num_items(&self) -> usize {
        self.scores[0].len()
    }

    fn knows_user(&self, user: usize) -> bool {
        user < self.scores.len()
    }

    fn score_items(&self, user: usize, out: &mut [f64]) -> recforget::Result<()> {
        out.copy_from_slice(&self.scores[user]);
        Ok(())
    }

    fn seen_items(&self, user: usize) -> &[usize] {
        &self.seen[user]
    }
}

/// Largest absolute deviation of per-user NDCG@20 and HR@20 from a full-sort
/// recomputation over raw scores.
pub fn ranking_error(seed: u64) -> f64 {
    let mut r = rng::rng(seed);
    let nu = r.gen_range(1..8);
    let ni = r.gen_range(2..60);
    let k = 20;
    let scores: Vec<Vec<f64>> = (0..nu)
        .map(|_| (0..ni).map(|_| r.gen_range(-3.0..3.0)).collect())
        .collect();
    let seen: Vec<Vec<usize>> = (0..nu).map(|_| (0..ni).filter(|_| r.gen_bool(0.2)).collect()).collect();
    let mut test_pairs = Vec::new();
    for (u, s) in seen.iter().enumerate() {
        for i in 0..ni {
            if !s.contains(&i) && r.gen_bool(0.25) {
                test_pairs.push((u, i));
            }
        }
    }
    let test = InteractionSet::from_pairs(test_pairs, nu, ni).unwrap();
    let table = ScoreTable { scores, seen };
    let got = eval::per_user_metrics(&table, &test, k);

    let mut worst = 0.0f64;
    let mut checked = 0;
    for u in 0..nu {
        let relevant: Vec<usize> = test.interactions.iter().filter(|p| p.0 == u).map(|p| p.1).collect();
        if relevant.is_empty() {
            continue;
        }
        let mut cand: Vec<usize> = (0..ni).filter(|i| !table.seen[u].contains(i)).collect();
        cand.sort_by(|&a, &b| {
            table.scores[u][b]
                .partial_cmp(&table.scores[u][a])
                .unwrap()
                .then(a.cmp(&b))
        });
        cand.truncate(k);
        let mut dcg = 0.0;
        let mut hits = 0;
        for (pos, i) in cand.iter().enumerate() {
            if relevant.contains(i) {
                dcg += 1.0 / ((pos + 2) as f64).log2();
                hits += 1;
            }
        }
        let idcg: f64 = (0..relevant.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
        let m = got.iter().find(|m| m.user == u).expect("user evaluated");
        worst = worst.max((m.ndcg - dcg / idcg).abs());
        worst = worst.max((m.hr - hits as f64 / relevant.len() as f64).abs());
        checked += 1;
    }
    assert_eq!(checked, got.len());
    worst
}

/// Full-batch L-BFGS with Armijo backtracking until the gradient norm drops
/// below `tol` or no step decreases the loss.
fn descend(obj: &Objective<'_>, batch: &Batch, start: EmbeddingTable, tol: f64) -> EmbeddingTable {
    const MEMORY: usize = 10;
    let (nu, ni, d) = (start.num_users, start.num_items, start.dim);
    let eval = |x: &[f64]| {
        let (f, g) = obj.grad(&unflat(x, nu, ni, d), batch).unwrap();
        (f, flat(&g))
    };
    let dotv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = flat(&start);
    let (mut f, mut g) = eval(&x);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>)> = Default::default();
    for _ in 0..20_000 {
        if norm(&g) < tol {
            break;
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y) in hist.iter().rev() {
            let a = dotv(s, &q) / dotv(y, s);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y)) = hist.back() {
            let gamma = dotv(s, y) / dotv(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = dotv(y, &q) / dotv(y, s);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dotv(&dir, &g) >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dotv(&dir, &g);
        let mut step = 1.0;
        let (xn, fn_, gn) = loop {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let (fv, gv) = eval(&xn);
            if fv < f && fv <= f + 1e-4 * step * slope {
                break (xn, fv, gv);
            }
            step *= 0.5;
            if step < 1e-16 {
                return unflat(&x, nu, ni, d);
            }
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dotv(&s, &y) > 1e-12 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y));
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    unflat(&x, nu, ni, d)
}

/// Gradient-norm tolerance of the descent oracle.
const ORACLE_TOL: f64 = 1e-10;

fn tiny_hyper() -> Hyperparams {
    Hyperparams {
        embedding_dim: 3,
        wmf_dense: true,
        wmf_negative_weight: 0.5,
        l2_reg: 0.05,
        ..Hyperparams::default()
    }
}

/// Distance on the affected rows between the retrained optimum and (SCIF
/// model, original model). SCIF improves when the first is smaller.
pub fn scif_distances(seed: u64) -> (f64, f64) {
    let hyper = tiny_hyper();
    let (nu, ni) = (20, 15);
    let train = random_interactions(seed, nu, ni, 0.3);
    let obj = Objective {
        kind: ModelKind::Wmf,
        l2: hyper.l2_reg,
        propagator: None,
    };
    let start = EmbeddingTable::random_normal(nu, ni, hyper.embedding_dim, 0.3, rng::derive(seed, 11));
    let full_batch = Batch::dense_wmf(&train, hyper.wmf_negative_weight);
    let original_params = descend(&obj, &full_batch, start, ORACLE_TOL);
    let original = TrainedModel::new(ModelKind::Wmf, original_params.clone(), hyper.clone(), &train);

    let request = UnlearnSet::for_users(Strategy::Random, &[(seed % nu as u64) as usize], &train);
    let cfg = ScifConfig {
        cg_tolerance: 1e-10,
        ..ScifConfig::default()
    };
    let (updated, info) = scif_influence_update(&original, &train, &request, &cfg, seed).unwrap();

    let remaining = train.filter_users(|u| !request.contains_user(u));
    let retrained = descend(
        &obj,
        &Batch::dense_wmf(&remaining, hyper.wmf_negative_weight),
        original_params.clone(),
        ORACLE_TOL,
    );
    let subset = ParamSubset::new(
        info.affected_users.clone(),
        info.affected_items.clone(),
        train.num_users,
        train.num_items,
    );
    let target = subset.gather(&retrained);
    let dist = |t: &EmbeddingTable| {
        let v = subset.gather(t);
        norm(&v.iter().zip(&target).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    (dist(&updated.params), dist(&original_params))
}

/// Two dense user communities with their own item blocks.
pub fn clustered_split(seed: u64) -> (InteractionSet, InteractionSet) {
    let (nu, ni) = (60, 40);
    let mut r = rng::rng(seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for u in 0..nu {
        let block = if u < nu / 2 { 0..ni / 2 } else { ni / 2..ni };
        let mut items: Vec<usize> = block.filter(|_| r.gen_bool(0.4)).collect();
        items.shuffle(&mut r);
        if items.len() < 3 {
            items.extend([u % (ni / 2), (u + 1) % (ni / 2), (u + 2) % (ni / 2)]);
        }
        valid.push((u, items.pop().unwrap()));
        train.extend(items.into_iter().map(|i| (u, i)));
    }
    let valid: Vec<_> = valid.into_iter().filter(|p| !train.contains(p)).collect();
    (
        InteractionSet::from_pairs(train, nu, ni).unwrap(),
        InteractionSet::from_pairs(valid, nu, ni).unwrap(),
    )
}

pub fn small_context(seed: u64, num_shards: usize) -> UnlearnContext {
    let (train, valid) = clustered_split(seed);
    let hyper = Hyperparams {
        embedding_dim: 8,
        batch_size: 64,
        max_epochs: 15,
        patience: 3,
        ..Hyperparams::default()
    };
    let mut ctx = UnlearnContext::new(ModelKind::Wmf, train, valid, hyper, seed);
    ctx.num_shards = num_shards;
    ctx
}

fn bits(t: &EmbeddingTable) -> Vec<u64> {
    flat(t).iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ShardedCheck {
    /// Unlearned interactions still held by any shard or submodel.
    pub leaked: usize,
    /// Shards without unlearned users whose parameters or data changed.
    pub changed_untouched: usize,
    pub weights_on_simplex: bool,
}

impl ShardedCheck {
    pub fn ok(&self) -> bool {
        self.leaked == 0 && self.changed_untouched == 0 && self.weights_on_simplex
    }
}

/// Unlearns a random set of users with a sharded method and scans the
/// result.
pub fn check_sharded_unlearning(method: Method, seed: u64) -> ShardedCheck {
    let ctx = small_context(seed, 4);
    let state = unlearn::prepare(method, &ctx, &SharedArtifacts::default()).unwrap();
    let mut r = rng::derived_rng(seed, 12);
    let mut users = ctx.train.active_users();
    users.shuffle(&mut r);
    users.truncate(r.gen_range(1..6));
    let request = UnlearnSet::for_users(Strategy::Random, &users, &ctx.train);
    let out = unlearn::unlearn(&state, &ctx, &request).unwrap();

    let before = state.serving.as_ensemble().expect("ensemble");
    let after = out.serving.as_ensemble().expect("ensemble");
    let mut check = ShardedCheck::default();
    for (s, data) in after.shard_data.iter().enumerate() {
        check.leaked += data
            .interactions
            .iter()
            .filter(|(u, _)| request.contains_user(*u))
            .count();
        check.leaked += users
            .iter()
            .map(|&u| after.submodels[s].seen_items(u).len())
            .sum::<usize>();
    }
    let touched: Vec<usize> = users.iter().filter_map(|&u| before.plan.shard_of(u)).collect();
    for s in (0..before.num_shards()).filter(|s| !touched.contains(s)) {
        let same = bits(&before.submodels[s].params) == bits(&after.submodels[s].params)
            && before.shard_data[s].interactions == after.shard_data[s].interactions;
        check.changed_untouched += usize::from(!same);
    }
    let w = &after.weights;
    check.weights_on_simplex = w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    check
}

/// Partition of a random user subset; every shard holds floor(n/S) or
/// ceil(n/S) users and each listed user lands in exactly one shard.
pub fn check_partition(mode: PartitionMode, seed: u64) -> Result<(), String> {
    let mut r = rng::rng(seed);
    let num_users = r.gen_range(10..80);
    let mut users: Vec<usize> = (0..num_users).filter(|_| r.gen_bool(0.8)).collect();
    if users.len() < 2 {
        users = (0..num_users).collect();
    }
    let shards = r.gen_range(1..=users.len().min(12));
    let features = EmbeddingTable::random_normal(num_users, 1, 4, 1.0, seed);
    let plan = balanced_partition(&users, num_users, shards, mode, Some(&features), seed).map_err(|e| e.to_string())?;
    let n = users.len();
    let (lo, hi) = (n / shards, n.div_ceil(shards));
    for (s, &size) in plan.sizes().iter().enumerate() {
        if size < lo || size > hi {
            return Err(format!("{mode}: shard {s} has {size} users, bounds [{lo}, {hi}]"));
        }
    }
    for u in 0..num_users {
        let listed = users.contains(&u);
        if listed != plan.shard_of(u).is_some() {
            return Err(format!(
                "{mode}: user {u} listed={listed} but assignment {:?}",
                plan.shard_of(u)
            ));
        }
    }
    Ok(())
}

/// Margins where shard 0 separates positives from negatives and the rest
/// are noise, for `num_shards` shards.
pub fn informative_diffs(seed: u64, num_shards: usize) -> Vec<Vec<Option<f64>>> {
    let mut r = rng::rng(seed);
    (0..400)
        .map(|_| {
            (0..num_shards)
                .map(|s| {
                    Some(if s == 0 {
                        2.0 + r.gen_range(0.0..1.0)
                    } else {
                        r.gen_range(-1.0..1.0)
                    })
                })
                .collect()
        })
        .collect()
}

pub fn aggregation_loss(diffs: &[Vec<Option<f64>>], w: &[f64]) -> f64 {
    diffs
        .iter()
        .map(|d| {
            let x: f64 = d.iter().zip(w).map(|(a, b)| a.unwrap() * b).sum();
            (1.0 + (-x).exp()).ln()
        })
        .sum::<f64>()
        / diffs.len() as f64
}

/// Fitted weights with the loss at the fitted and at uniform weights.
pub fn aggregator_oracle(seed: u64, num_shards: usize) -> (Vec<f64>, f64, f64) {
    let diffs = informative_diffs(seed, num_shards);
    let w = fit_weights_from_diffs(&diffs, num_shards, seed);
    let uniform = vec![1.0 / num_shards as f64; num_shards];
    let fitted = aggregation_loss(&diffs, &w);
    (w, fitted, aggregation_loss(&diffs, &uniform))
}

pub struct Constant(pub bool);

impl MembershipClassifier for Constant {
    fn is_member(&self, _: &[f64]) -> bool {
        self.0
    }
}

/// Accuracy of both constant classifiers on a balanced query.
pub fn constant_mio_scores(seed: u64) -> (f64, f64) {
    let mut r = rng::rng(seed);
    let nu = r.gen_range(4..40);
    let set = random_interactions(seed, nu, 12, 0.3);
    let t = EmbeddingTable::random_normal(nu, 12, 4, 1.0, seed);
    let mut users: Vec<usize> = (0..nu).collect();
    users.shuffle(&mut r);
    let cut = r.gen_range(1..nu);
    let (unlearned, holdout) = users.split_at(cut);
    let items = set.user_items();
    let yes = mio_accuracy(&Constant(true), &t, unlearned, holdout, &items, seed).unwrap();
    let no = mio_accuracy(&Constant(false), &t, unlearned, holdout, &items, seed).unwrap();
    (yes, no)
}

/// A-IGF with the groups as given and with the group labels swapped.
pub fn a_igf_pair(seed: u64) -> (f64, f64) {
    let mut r = rng::rng(seed);
    let n = r.gen_range(2..50);
    let metrics: Vec<UserMetrics> = (0..n)
        .map(|u| UserMetrics {
            user: u,
            ndcg: r.gen_range(0.0..1.0),
            hr: r.gen_range(0.0..1.0),
        })
        .collect();
    let cut = r.gen_range(1..n);
    let groups = GroupAssignment {
        active: (0..cut).collect(),
        inactive: (cut..n).collect(),
    };
    let swapped = GroupAssignment {
        active: groups.inactive.clone(),
        inactive: groups.active.clone(),
    };
    (
        a_igf_from(&metrics, &groups).unwrap(),
        a_igf_from(&metrics, &swapped).unwrap(),
    )
}

/// shardGF of a one-shard ensemble.
pub fn single_shard_gf(seed: u64) -> f64 {
    let train = random_interactions(seed, 10, 15, 0.3);
    let test = random_interactions(seed + 1, 10, 15, 0.2);
    let m = Arc::new(TrainedModel::new(
        ModelKind::Bpr,
        EmbeddingTable::random_normal(10, 15, 4, 1.0, seed),
        Hyperparams::default(),
        &train,
    ));
    shard_gf(&[m], &[test], 20, None).unwrap().0
}
