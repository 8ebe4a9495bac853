//! Model losses with exact analytic gradients and Hessian-vector products.
//!
//! All three models share one bilinear score `s(u, i) = e_u . e_i` over
//! *scoring* embeddings. For WMF and BPR those are the raw parameters; for
//! LightGCN they are `P(theta)` with `P` the (linear, symmetric) propagation
//! operator, so gradients and HVPs are pulled back through `P`. The L2 term
//! always acts on the raw parameter rows a term touches, once per term.

use std::borrow::Cow;

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};

use super::{dot, EmbeddingTable, ModelKind, Propagator};

/// Weighted squared error `weight * (s(u, i) - target)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm {
    pub user: usize,
    pub item: usize,
    pub target: f64,
    pub weight: f64,
}

/// Pairwise logistic loss `-ln sigmoid(s(u, pos) - s(u, neg))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTerm {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub points: Vec<PointTerm>,
    pub pairs: Vec<PairTerm>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len() + self.pairs.len()
    }

    pub fn clear(&mut self) {
        self.points.clear();
        self.pairs.clear();
    }

    /// Adds the loss terms of one positive and its sampled negatives.
    pub fn push_sample(&mut self, kind: ModelKind, user: usize, pos: usize, negs: &[usize], wmf_negative_weight: f64) {
        if kind.is_pointwise() {
            self.points.push(PointTerm {
                user,
                item: pos,
                target: 1.0,
                weight: 1.0,
            });
            self.points.extend(negs.iter().map(|&j| PointTerm {
                user,
                item: j,
                target: 0.0,
                weight: wmf_negative_weight,
            }));
        } else {
            self.pairs.extend(negs.iter().map(|&neg| PairTerm { user, pos, neg }));
        }
    }

    pub fn from_samples<'a>(
        kind: ModelKind,
        samples: impl IntoIterator<Item = (usize, usize, &'a [usize])>,
        wmf_negative_weight: f64,
    ) -> Self {
        let mut b = Batch::default();
        for (u, i, negs) in samples {
            b.push_sample(kind, u, i, negs, wmf_negative_weight);
        }
        b
    }

    /// Full WMF objective: every observed pair with weight 1 and every missing
    /// pair of a user with at least one interaction at `negative_weight`.
    pub fn dense_wmf(train: &InteractionSet, negative_weight: f64) -> Self {
        let user_items = train.user_items();
        let mut points = Vec::new();
        for (u, items) in user_items.iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            for i in 0..train.num_items {
                let observed = items.binary_search(&i).is_ok();
                points.push(PointTerm {
                    user: u,
                    item: i,
                    target: if observed { 1.0 } else { 0.0 },
                    weight: if observed { 1.0 } else { negative_weight },
                });
            }
        }
        Batch {
            points,
            pairs: Vec::new(),
        }
    }

    /// Terms that touch at least one row of `subset`.
    pub fn restricted_to(&self, subset: &ParamSubset) -> Batch {
        Batch {
            points: self
                .points
                .iter()
                .copied()
                .filter(|t| subset.has_user(t.user) || subset.has_item(t.item))
                .collect(),
            pairs: self
                .pairs
                .iter()
                .copied()
                .filter(|t| subset.has_user(t.user) || subset.has_item(t.pos) || subset.has_item(t.neg))
                .collect(),
        }
    }
}

/// A set of user and item rows, flattened as all user rows then all item rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSubset {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    user_pos: Vec<Option<usize>>,
    item_pos: Vec<Option<usize>>,
}

impl ParamSubset {
    pub fn new(mut users: Vec<usize>, mut items: Vec<usize>, num_users: usize, num_items: usize) -> Self {
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        let mut user_pos = vec![None; num_users];
        let mut item_pos = vec![None; num_items];
        for (k, &u) in users.iter().enumerate() {
            user_pos[u] = Some(k);
        }
        for (k, &i) in items.iter().enumerate() {
            item_pos[i] = Some(k);
        }
        ParamSubset {
            users,
            items,
            user_pos,
            item_pos,
        }
    }

    pub fn all(num_users: usize, num_items: usize) -> Self {
        Self::new((0..num_users).collect(), (0..num_items).collect(), num_users, num_items)
    }

    #[inline]
    pub fn has_user(&self, u: usize) -> bool {
        self.user_pos.get(u).is_some_and(Option::is_some)
    }

    #[inline]
    pub fn has_item(&self, i: usize) -> bool {
        self.item_pos.get(i).is_some_and(Option::is_some)
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.items.is_empty()
    }

    pub fn flat_len(&self, dim: usize) -> usize {
        (self.users.len() + self.items.len()) * dim
    }

    pub fn gather(&self, t: &EmbeddingTable) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len(t.dim));
        for &u in &self.users {
            out.extend_from_slice(t.user(u));
        }
        for &i in &self.items {
            out.extend_from_slice(t.item(i));
        }
        out
    }

    /// Zero table with `v` written into the subset rows.
    pub fn scatter(&self, v: &[f64], num_users: usize, num_items: usize, dim: usize) -> EmbeddingTable {
        let mut t = EmbeddingTable::zeros(num_users, num_items, dim);
        self.scatter_add(v, &mut t);
        t
    }

    pub fn scatter_add(&self, v: &[f64], t: &mut EmbeddingTable) {
        let d = t.dim;
        let off = self.users.len() * d;
        for (k, &u) in self.users.iter().enumerate() {
            for (a, b) in t.user_mut(u).iter_mut().zip(&v[k * d..(k + 1) * d]) {
                *a += b;
            }
        }
        for (k, &i) in self.items.iter().enumerate() {
            for (a, b) in t.item_mut(i).iter_mut().zip(&v[off + k * d..off + (k + 1) * d]) {
                *a += b;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ln(1 + exp(-x)), overflow-safe
#[inline]
fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Gradient accumulator that remembers which rows it touched, so sparse
/// SGD steps only visit those rows.
#[derive(Debug, Clone)]
pub(crate) struct GradBuf {
    pub g: EmbeddingTable,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    user_flag: Vec<bool>,
    item_flag: Vec<bool>,
    pub dense: bool,
}

impl GradBuf {
    pub fn new(num_users: usize, num_items: usize, dim: usize) -> Self {
        GradBuf {
            g: EmbeddingTable::zeros(num_users, num_items, dim),
            users: Vec::new(),
            items: Vec::new(),
            user_flag: vec![false; num_users],
            item_flag: vec![false; num_items],
            dense: false,
        }
    }

    #[inline]
    fn touch_user(&mut self, u: usize) {
        if !self.user_flag[u] {
            self.user_flag[u] = true;
            self.users.push(u);
        }
    }

    #[inline]
    fn touch_item(&mut self, i: usize) {
        if !self.item_flag[i] {
            self.item_flag[i] = true;
            self.items.push(i);
        }
    }

    /// `params -= lr * g`, then resets the buffer.
    pub fn step_and_clear(&mut self, params: &mut EmbeddingTable, lr: f64) {
        if self.dense {
            params.axpy(-lr, &self.g);
            self.g.user_vecs.iter_mut().for_each(|x| *x = 0.0);
            self.g.item_vecs.iter_mut().for_each(|x| *x = 0.0);
            self.dense = false;
        } else {
            for &u in &self.users {
                axpy(params.user_mut(u), -lr, self.g.user(u));
                self.g.user_mut(u).iter_mut().for_each(|x| *x = 0.0);
            }
            for &i in &self.items {
                axpy(params.item_mut(i), -lr, self.g.item(i));
                self.g.item_mut(i).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for &u in &self.users {
            self.user_flag[u] = false;
        }
        for &i in &self.items {
            self.item_flag[i] = false;
        }
        self.users.clear();
        self.items.clear();
    }
}

/// A model loss bound to its kind, L2 weight and (for LightGCN) propagation.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub kind: ModelKind,
    pub l2: f64,
    pub propagator: Option<&'a Propagator>,
}

impl<'a> Objective<'a> {
    fn check(&self) -> Result<()> {
        if self.kind == ModelKind::LightGcn && self.propagator.is_none() {
            return Err(Error::invalid("LightGCN objective needs a propagator"));
        }
        Ok(())
    }

    fn scoring<'t>(&self, params: &'t EmbeddingTable) -> Cow<'t, EmbeddingTable> {
        match (self.kind, self.propagator) {
            (ModelKind::LightGcn, Some(p)) => Cow::Owned(p.propagate(params)),
            _ => Cow::Borrowed(params),
        }
    }

    pub fn loss(&self, params: &EmbeddingTable, batch: &Batch) -> Result<f64> {
        self.check()?;
        let emb = self.scoring(params);
        let mut loss = 0.0;
        for t in &batch.points {
            let r = emb.score(t.user, t.item) - t.target;
            loss += t.weight * r * r;
        }
        for t in &batch.pairs {
            let x = emb.score(t.user, t.pos) - emb.score(t.user, t.neg);
            loss += softplus_neg(x);
        }
        loss += self.l2 * reg_sum(params, batch);
        Ok(loss)
    }

    /// Loss and dense gradient w.r.t. the raw parameters.
    pub fn grad(&self, params: &EmbeddingTable, batch: &Batch) -> Result<(f64, EmbeddingTable)> {
        let mut buf = GradBuf::new(params.num_users, params.num_items, params.dim);
        let loss = self.grad_into(params, batch, &mut buf)?;
        Ok((loss, buf.g))
    }

    pub(crate) fn grad_into(&self, params: &EmbeddingTable, batch: &Batch, buf: &mut GradBuf) -> Result<f64> {
        self.check()?;
        let loss = match (self.kind, self.propagator) {
            (ModelKind::LightGcn, Some(p)) => {
                let emb = p.propagate(params);
                let mut ge = GradBuf::new(params.num_users, params.num_items, params.dim);
                let loss = data_grad(&emb, batch, &mut ge);
                let pulled = p.propagate(&ge.g);
                buf.g.axpy(1.0, &pulled);
                buf.dense = true;
                loss
            }
            _ => data_grad(params, batch, buf),
        };
        let reg = reg_grad(params, batch, self.l2, buf);
        Ok(loss + reg)
    }

    /// Full Hessian of the batch loss applied to a table-shaped direction.
    pub fn hvp_table(&self, params: &EmbeddingTable, batch: &Batch, dir: &EmbeddingTable) -> Result<EmbeddingTable> {
        self.check()?;
        let mut out = EmbeddingTable::zeros(params.num_users, params.num_items, params.dim);
        match (self.kind, self.propagator) {
            (ModelKind::LightGcn, Some(p)) => {
                let emb = p.propagate(params);
                let pdir = p.propagate(dir);
                let mut he = EmbeddingTable::zeros(params.num_users, params.num_items, params.dim);
                data_hvp(&emb, batch, &pdir, &mut he);
                out.axpy(1.0, &p.propagate(&he));
            }
            _ => data_hvp(params, batch, dir, &mut out),
        }
        reg_hvp(batch, self.l2, dir, &mut out);
        Ok(out)
    }

    /// `(H_SS + damping I) v` for the Hessian restricted to `subset`.
    pub fn hvp(
        &self,
        params: &EmbeddingTable,
        batch: &Batch,
        subset: &ParamSubset,
        v: &[f64],
        damping: f64,
    ) -> Result<Vec<f64>> {
        let expected = subset.flat_len(params.dim);
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        let dir = subset.scatter(v, params.num_users, params.num_items, params.dim);
        let hv = self.hvp_table(params, batch, &dir)?;
        let mut out = subset.gather(&hv);
        if damping != 0.0 {
            axpy(&mut out, damping, v);
        }
        Ok(out)
    }
}

fn reg_sum(params: &EmbeddingTable, batch: &Batch) -> f64 {
    let sq = |x: &[f64]| dot(x, x);
    let mut s = 0.0;
    for t in &batch.points {
        s += sq(params.user(t.user)) + sq(params.item(t.item));
    }
    for t in &batch.pairs {
        s += sq(params.user(t.user)) + sq(params.item(t.pos)) + sq(params.item(t.neg));
    }
    s
}

fn reg_grad(params: &EmbeddingTable, batch: &Batch, l2: f64, buf: &mut GradBuf) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let c = 2.0 * l2;
    let sq = |x: &[f64]| dot(x, x);
    let mut s = 0.0;
    for t in &batch.points {
        s += sq(params.user(t.user)) + sq(params.item(t.item));
        buf.touch_user(t.user);
        buf.touch_item(t.item);
        axpy(buf.g.user_mut(t.user), c, params.user(t.user));
        axpy(buf.g.item_mut(t.item), c, params.item(t.item));
    }
    for t in &batch.pairs {
        s += sq(params.user(t.user)) + sq(params.item(t.pos)) + sq(params.item(t.neg));
        buf.touch_user(t.user);
        buf.touch_item(t.pos);
        buf.touch_item(t.neg);
        axpy(buf.g.user_mut(t.user), c, params.user(t.user));
        axpy(buf.g.item_mut(t.pos), c, params.item(t.pos));
        axpy(buf.g.item_mut(t.neg), c, params.item(t.neg));
    }
    l2 * s
}

fn reg_hvp(batch: &Batch, l2: f64, dir: &EmbeddingTable, out: &mut EmbeddingTable) {
    if l2 == 0.0 {
        return;
    }
    let c = 2.0 * l2;
    for t in &batch.points {
        axpy(out.user_mut(t.user), c, dir.user(t.user));
        axpy(out.item_mut(t.item), c, dir.item(t.item));
    }
    for t in &batch.pairs {
        axpy(out.user_mut(t.user), c, dir.user(t.user));
        axpy(out.item_mut(t.pos), c, dir.item(t.pos));
        axpy(out.item_mut(t.neg), c, dir.item(t.neg));
    }
}

/// Data-term gradient w.r.t. the scoring embeddings, accumulated into `buf`.
fn data_grad(emb: &EmbeddingTable, batch: &Batch, buf: &mut GradBuf) -> f64 {
    let d = emb.dim;
    let mut loss = 0.0;
    for t in &batch.points {
        let (u, v) = (emb.user(t.user), emb.item(t.item));
        let r = dot(u, v) - t.target;
        loss += t.weight * r * r;
        let coef = 2.0 * t.weight * r;
        buf.touch_user(t.user);
        buf.touch_item(t.item);
        axpy(buf.g.user_mut(t.user), coef, v);
        axpy(buf.g.item_mut(t.item), coef, u);
    }
    let mut diff = vec![0.0; d];
    for t in &batch.pairs {
        let (u, vi, vj) = (emb.user(t.user), emb.item(t.pos), emb.item(t.neg));
        for k in 0..d {
            diff[k] = vi[k] - vj[k];
        }
        let x = dot(u, &diff);
        loss += softplus_neg(x);
        let fp = -sigmoid(-x);
        buf.touch_user(t.user);
        buf.touch_item(t.pos);
        buf.touch_item(t.neg);
        axpy(buf.g.user_mut(t.user), fp, &diff);
        axpy(buf.g.item_mut(t.pos), fp, u);
        axpy(buf.g.item_mut(t.neg), -fp, u);
    }
    loss
}

/// Data-term Hessian (w.r.t. scoring embeddings) applied to `dir`.
fn data_hvp(emb: &EmbeddingTable, batch: &Batch, dir: &EmbeddingTable, out: &mut EmbeddingTable) {
    let d = emb.dim;
    let mut hu = vec![0.0; d];
    let mut hv = vec![0.0; d];
    for t in &batch.points {
        let (u, v) = (emb.user(t.user), emb.item(t.item));
        let (du, dv) = (dir.user(t.user), dir.item(t.item));
        let r = dot(u, v) - t.target;
        let ds = dot(v, du) + dot(u, dv);
        let c = 2.0 * t.weight;
        let (hu_a, hu_b) = (c * ds, c * r);
        for k in 0..d {
            hu[k] = hu_a * v[k] + hu_b * dv[k];
            hv[k] = hu_a * u[k] + hu_b * du[k];
        }
        axpy(out.user_mut(t.user), 1.0, &hu);
        axpy(out.item_mut(t.item), 1.0, &hv);
    }
    let mut diff = vec![0.0; d];
    let mut ddiff = vec![0.0; d];
    let mut hu = vec![0.0; d];
    let mut hvi = vec![0.0; d];
    for t in &batch.pairs {
        let (u, vi, vj) = (emb.user(t.user), emb.item(t.pos), emb.item(t.neg));
        let (du, dvi, dvj) = (dir.user(t.user), dir.item(t.pos), dir.item(t.neg));
        for k in 0..d {
            diff[k] = vi[k] - vj[k];
            ddiff[k] = dvi[k] - dvj[k];
        }
        let x = dot(u, &diff);
        let p = sigmoid(x);
        let fp = p - 1.0;
        let fpp = p * (1.0 - p);
        let dx = dot(&diff, du) + dot(u, &ddiff);
        let a = fpp * dx;
        for k in 0..d {
            hu[k] = a * diff[k] + fp * ddiff[k];
            hvi[k] = a * u[k] + fp * du[k];
        }
        axpy(out.user_mut(t.user), 1.0, &hu);
        axpy(out.item_mut(t.pos), 1.0, &hvi);
        axpy(out.item_mut(t.neg), -1.0, &hvi);
    }
}

/// Batch loss and its gradient w.r.t. the raw parameters.
pub fn loss_grad(obj: &Objective<'_>, params: &EmbeddingTable, batch: &Batch) -> Result<(f64, EmbeddingTable)> {
    obj.grad(params, batch)
}

pub fn loss_value(obj: &Objective<'_>, params: &EmbeddingTable, batch: &Batch) -> Result<f64> {
    obj.loss(params, batch)
}

/// `(H + damping I) v` with `H` the batch-loss Hessian restricted to `subset`.
pub fn hessian_vector_product(
    obj: &Objective<'_>,
    params: &EmbeddingTable,
    batch: &Batch,
    subset: &ParamSubset,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    obj.hvp(params, batch, subset, v, damping)
}
