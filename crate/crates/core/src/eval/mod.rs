//! Ranking quality, membership inference and fairness metrics.

mod fairness;
mod mio;
mod ranking;

pub use fairness::{a_igf, a_igf_from, population_variance, shard_gf, GroupAssignment, ACTIVE_FRACTION};
pub use mio::{
    mio_accuracy, mio_features, train_mio, train_mio_with, FeatureSource, MembershipClassifier, MioModel, MIO_EPOCHS,
    MIO_HIDDEN, MIO_LEARNING_RATE,
};
pub use ranking::{
    hr_at_k, hr_of, mean, ndcg_at_k, ndcg_of, per_user_metrics, per_user_metrics_excluding, ranked_list, RankedList,
    UserMetrics,
};

/// Cutoff used for every reported ranking metric.
pub const METRIC_K: usize = 20;
