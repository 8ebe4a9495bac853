use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataset::{sample_negatives_with, InteractionSet};
use crate::error::{Error, Result};
use crate::eval;
use crate::rng;

use super::loss::GradBuf;
use super::{Batch, EmbeddingTable, Hyperparams, ModelKind, Objective, Propagator, TrainedModel};

const INIT_STREAM: u64 = 0x1111;
const ORDER_STREAM: u64 = 1 << 32;

/// Validation cut-off used for early stopping.
pub const VALIDATION_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Validation NDCG@20 after each epoch (epoch 1 first).
    pub val_ndcg: Vec<f64>,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub early_stopped: bool,
    pub wall_time: f64,
}

/// Mini-batch SGD with per-epoch negative resampling and early stopping on
/// validation NDCG@20. Returns the best-validation parameters.
pub fn train(
    kind: ModelKind,
    train: &InteractionSet,
    valid: &InteractionSet,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(TrainedModel, TrainLog)> {
    fit(kind, train, Some(valid), hyper, seed, hyper.max_epochs)
}

/// Trains for exactly `epochs` epochs without validation.
pub fn train_fixed_epochs(
    kind: ModelKind,
    train: &InteractionSet,
    hyper: &Hyperparams,
    epochs: usize,
    seed: u64,
) -> Result<TrainedModel> {
    fit(kind, train, None, hyper, seed, epochs).map(|(m, _)| m)
}

/// Validation NDCG@20 of a trained model.
pub fn validate(m: &TrainedModel, valid: &InteractionSet) -> f64 {
    eval::ndcg_at_k(m, valid, VALIDATION_K)
}

fn fit(
    kind: ModelKind,
    train: &InteractionSet,
    valid: Option<&InteractionSet>,
    hyper: &Hyperparams,
    seed: u64,
    epochs: usize,
) -> Result<(TrainedModel, TrainLog)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(v) = valid {
        if v.num_users != train.num_users || v.num_items != train.num_items {
            return Err(Error::invalid("train and validation index spaces differ"));
        }
    }
    let start = Instant::now();
    let (nu, ni, dim) = (train.num_users, train.num_items, hyper.embedding_dim);
    let mut params = EmbeddingTable::random_normal(nu, ni, dim, hyper.init_std, rng::derive(seed, INIT_STREAM));
    let propagator = (kind == ModelKind::LightGcn).then(|| Arc::new(Propagator::new(train, hyper.lightgcn_layers)));
    let seen = Arc::new(train.user_items());
    let obj = Objective {
        kind,
        l2: hyper.l2_reg,
        propagator: propagator.as_deref(),
    };
    let dense = (kind == ModelKind::Wmf && hyper.wmf_dense).then(|| Batch::dense_wmf(train, hyper.wmf_negative_weight));

    let mut buf = GradBuf::new(nu, ni, dim);
    let mut batch = Batch::default();
    let mut val_ndcg = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut stop_epoch = epochs;
    let mut early_stopped = false;

    for epoch in 1..=epochs {
        let mut order_rng = rng::derived_rng(seed, ORDER_STREAM + epoch as u64);
        match &dense {
            Some(all) => {
                let mut order: Vec<usize> = (0..all.points.len()).collect();
                order.shuffle(&mut order_rng);
                for chunk in order.chunks(hyper.batch_size) {
                    batch.clear();
                    batch.points.extend(chunk.iter().map(|&k| all.points[k]));
                    sgd_step(&obj, &mut params, &batch, &mut buf, hyper.learning_rate, epoch)?;
                }
            }
            None => {
                let negs = sample_negatives_with(
                    train,
                    &seen,
                    hyper.negatives_per_positive,
                    rng::derive(seed, epoch as u64),
                );
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(&mut order_rng);
                for chunk in order.chunks(hyper.batch_size) {
                    batch.clear();
                    for &k in chunk {
                        let (u, i) = train.interactions[k];
                        batch.push_sample(kind, u, i, &negs.negatives[k], hyper.wmf_negative_weight);
                    }
                    sgd_step(&obj, &mut params, &batch, &mut buf, hyper.learning_rate, epoch)?;
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        if let Some(valid) = valid {
            let model = TrainedModel::with_parts(
                kind,
                params.clone(),
                hyper.clone(),
                propagator.clone(),
                Arc::clone(&seen),
                train.len(),
            );
            let ndcg = validate(&model, valid);
            val_ndcg.push(ndcg);
            log::debug!("{kind} epoch {epoch}: validation NDCG@20 {ndcg:.4}");
            if ndcg > best.0 {
                best = (ndcg, epoch, params.clone());
            } else if epoch - best.1 >= hyper.patience {
                stop_epoch = epoch;
                early_stopped = true;
                break;
            }
        }
    }

    let (best_epoch, final_params) = if valid.is_some() {
        (best.1, best.2)
    } else {
        (epochs, params)
    };
    let model = TrainedModel::with_parts(kind, final_params, hyper.clone(), propagator, seen, train.len());
    let log = TrainLog {
        val_ndcg,
        best_epoch,
        stop_epoch,
        early_stopped,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((model, log))
}

fn sgd_step(
    obj: &Objective<'_>,
    params: &mut EmbeddingTable,
    batch: &Batch,
    buf: &mut GradBuf,
    lr: f64,
    epoch: usize,
) -> Result<()> {
    let loss = obj.grad_into(params, batch, buf)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch });
    }
    buf.step_and_clear(params, lr);
    Ok(())
}
