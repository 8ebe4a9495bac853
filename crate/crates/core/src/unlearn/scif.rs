//! Selective, collaborative influence-function unlearning: one damped Newton
//! step on the parameters touched by the removed users' data.

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_negatives_with, InteractionSet};
use crate::error::{Error, Result};
use crate::graph::UnlearnSet;
use crate::model::{Batch, ModelKind, ParamSubset, TrainedModel};
use crate::rng;

const NEGATIVE_STREAM: u64 = 0x5C1F;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScifConfig {
    pub damping: f64,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for ScifConfig {
    fn default() -> Self {
        ScifConfig {
            damping: 0.01,
            cg_max_iterations: 100,
            cg_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceUpdate {
    pub affected_users: Vec<usize>,
    pub affected_items: Vec<usize>,
    /// Update applied to the affected rows (users first, then items).
    pub delta: Vec<f64>,
    pub cg_iterations: usize,
    /// Relative residual `||A d - g|| / ||g||` of the applied iterate.
    pub residual_norm: f64,
    pub converged: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when a direction of non-positive curvature stopped the solve.
    pub indefinite: bool,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for `A x = b` with `A` given as a matrix-vector
/// product. Returns the iterate with the smallest residual seen.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], max_iter: usize, tol: f64) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let b_norm = dotv(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            indefinite: false,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dotv(&r, &r);
    let mut best = (x.clone(), 1.0);
    let mut iterations = 0;
    let mut indefinite = false;
    while iterations < max_iter {
        let ap = apply(&p)?;
        let curvature = dotv(&p, &ap);
        if !(curvature > 0.0) {
            indefinite = true;
            break;
        }
        let alpha = rs / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;
        let rs_new = dotv(&r, &r);
        let rel = rs_new.sqrt() / b_norm;
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= tol {
            break;
        }
        let beta = rs_new / rs;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rs = rs_new;
    }
    let converged = best.1 <= tol;
    Ok(CgResult {
        x: best.0,
        iterations,
        relative_residual: best.1,
        converged,
        indefinite,
    })
}

/// Loss terms for a set of interactions, using the model's own objective
/// (dense WMF when the model was trained that way).
fn loss_batch(model: &TrainedModel, data: &InteractionSet, negatives: &[Vec<usize>]) -> Batch {
    let h = &model.hyper;
    if model.kind == ModelKind::Wmf && h.wmf_dense {
        return Batch::dense_wmf(data, h.wmf_negative_weight);
    }
    Batch::from_samples(
        model.kind,
        data.interactions
            .iter()
            .zip(negatives)
            .map(|(&(u, i), n)| (u, i, n.as_slice())),
        h.wmf_negative_weight,
    )
}

/// Removes the influence of `unlearn`'s interactions from `model`.
///
/// The affected set holds the items the unlearned users interacted with and
/// the remaining users who share at least one of those items. The update
/// solves `(H + damping I) d = g`, with `H` the remaining-data Hessian and
/// `g` the removed-data gradient, both restricted to the affected set.
/// Unlearned users' own rows are zeroed.
pub fn scif_influence_update(
    model: &TrainedModel,
    train: &InteractionSet,
    unlearn: &UnlearnSet,
    cfg: &ScifConfig,
    seed: u64,
) -> Result<(TrainedModel, InfluenceUpdate)> {
    if model.kind == ModelKind::LightGcn {
        return Err(Error::Unsupported(
            "influence-function unlearning is not defined for LightGCN".into(),
        ));
    }
    if let Some(&u) = unlearn.users.iter().find(|&&u| u >= train.num_users) {
        return Err(Error::UnknownUser(u));
    }
    let removed_users = &unlearn.users;
    let is_removed = |u: usize| removed_users.binary_search(&u).is_ok();
    let remaining = train.filter_users(|u| !is_removed(u));
    let removed = train.filter_users(is_removed);

    if removed.is_empty() {
        let update = InfluenceUpdate {
            affected_users: Vec::new(),
            affected_items: Vec::new(),
            delta: Vec::new(),
            cg_iterations: 0,
            residual_norm: 0.0,
            converged: true,
            warning: None,
        };
        return Ok((
            TrainedModel::new(model.kind, model.params.clone(), model.hyper.clone(), &remaining),
            update,
        ));
    }

    let mut items: Vec<usize> = removed.interactions.iter().map(|&(_, i)| i).collect();
    items.sort_unstable();
    items.dedup();
    let mut users: Vec<usize> = remaining
        .interactions
        .iter()
        .filter(|(_, i)| items.binary_search(i).is_ok())
        .map(|&(u, _)| u)
        .collect();
    users.sort_unstable();
    users.dedup();
    let subset = ParamSubset::new(users, items, train.num_users, train.num_items);

    let negs = sample_negatives_with(
        train,
        &train.user_items(),
        model.hyper.negatives_per_positive,
        rng::derive(seed, NEGATIVE_STREAM),
    );
    let mut removed_negs = Vec::new();
    let mut remaining_negs = Vec::new();
    for (&(u, _), n) in train.interactions.iter().zip(&negs.negatives) {
        if is_removed(u) {
            removed_negs.push(n.clone());
        } else {
            remaining_negs.push(n.clone());
        }
    }
    let removed_batch = loss_batch(model, &removed, &removed_negs);
    let remaining_batch = loss_batch(model, &remaining, &remaining_negs).restricted_to(&subset);

    let obj = model.objective();
    let params = &model.params;
    let (_, full_grad) = obj.grad(params, &removed_batch)?;
    let g = subset.gather(&full_grad);
    let cg = conjugate_gradient(
        |v| obj.hvp(params, &remaining_batch, &subset, v, cfg.damping),
        &g,
        cfg.cg_max_iterations,
        cfg.cg_tolerance,
    )?;
    if cg.x.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("influence update is not finite"));
    }

    let mut new_params = params.clone();
    subset.scatter_add(&cg.x, &mut new_params);
    for &u in removed_users {
        new_params.user_mut(u).iter_mut().for_each(|x| *x = 0.0);
    }

    let warning = (!cg.converged).then(|| {
        format!(
            "CG stopped after {} iterations at relative residual {:.3e}{}",
            cg.iterations,
            cg.relative_residual,
            if cg.indefinite { " (non-positive curvature)" } else { "" }
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let update = InfluenceUpdate {
        affected_users: subset.users.clone(),
        affected_items: subset.items.clone(),
        delta: cg.x,
        cg_iterations: cg.iterations,
        residual_norm: cg.relative_residual,
        converged: cg.converged,
        warning,
    };
    let updated = TrainedModel::new(model.kind, new_params, model.hyper.clone(), &remaining);
    Ok((updated, update))
}
