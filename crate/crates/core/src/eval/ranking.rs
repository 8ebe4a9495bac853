use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::model::{top_k, Recommender};

/// Top-k list of one user with relevance flags against held-out items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub relevant: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub ndcg: f64,
    pub hr: f64,
}

/// `1 / log2(rank + 1)` for 1-based rank.
#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k of a ranked list against a sorted relevant set.
pub fn ndcg_of(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| discount(r + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    dcg / idcg
}

/// Recall-style hit ratio: hits in the top k over the number of relevant items.
pub fn hr_of(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// Ranks the catalog for `user`, excluding the model's training items.
pub fn ranked_list<R: Recommender + ?Sized>(m: &R, user: usize, relevant: &[usize], k: usize) -> Result<RankedList> {
    if !m.knows_user(user) {
        return Err(Error::UnknownUser(user));
    }
    let mut scores = vec![0.0; m.num_items()];
    m.score_items(user, &mut scores)?;
    let items = top_k(&scores, k, m.seen_items(user));
    let relevant = items.iter().map(|i| relevant.binary_search(i).is_ok()).collect();
    Ok(RankedList { user, items, relevant })
}

/// NDCG@k and HR@k for every user that has held-out items and a trained
/// embedding, in ascending user order.
pub fn per_user_metrics<R: Recommender + ?Sized>(m: &R, test: &InteractionSet, k: usize) -> Vec<UserMetrics> {
    metrics_impl(m, test, k, None)
}

/// Like [`per_user_metrics`], additionally excluding each user's items in
/// `history` (for example validation interactions) from the ranking.
pub fn per_user_metrics_excluding<R: Recommender + ?Sized>(
    m: &R,
    test: &InteractionSet,
    k: usize,
    history: &InteractionSet,
) -> Vec<UserMetrics> {
    metrics_impl(m, test, k, Some(history))
}

fn metrics_impl<R: Recommender + ?Sized>(
    m: &R,
    test: &InteractionSet,
    k: usize,
    history: Option<&InteractionSet>,
) -> Vec<UserMetrics> {
    let extra = history.map(InteractionSet::user_items);
    let mut scores = vec![0.0; m.num_items()];
    let mut exclude = Vec::new();
    let mut out = Vec::new();
    for (user, relevant) in test.user_items().iter().enumerate() {
        if relevant.is_empty() || !m.knows_user(user) {
            continue;
        }
        if m.score_items(user, &mut scores).is_err() {
            continue;
        }
        let seen = m.seen_items(user);
        let ranked = match extra.as_ref().and_then(|e| e.get(user)).filter(|e| !e.is_empty()) {
            Some(more) => {
                exclude.clear();
                exclude.extend_from_slice(seen);
                exclude.extend_from_slice(more);
                exclude.sort_unstable();
                exclude.dedup();
                top_k(&scores, k, &exclude)
            }
            None => top_k(&scores, k, seen),
        };
        out.push(UserMetrics {
            user,
            ndcg: ndcg_of(&ranked, relevant, k),
            hr: hr_of(&ranked, relevant, k),
        });
    }
    out
}

/// Arithmetic mean; 0 for an empty sequence.
pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean NDCG@k over evaluable users; 0 when there are none.
pub fn ndcg_at_k<R: Recommender + ?Sized>(m: &R, test: &InteractionSet, k: usize) -> f64 {
    mean(per_user_metrics(m, test, k).iter().map(|x| x.ndcg))
}

/// Mean per-user recall@k over evaluable users; 0 when there are none.
pub fn hr_at_k<R: Recommender + ?Sized>(m: &R, test: &InteractionSet, k: usize) -> f64 {
    mean(per_user_metrics(m, test, k).iter().map(|x| x.hr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndcg_closed_forms() {
        assert_eq!(ndcg_of(&[7, 1, 2], &[7], 20), 1.0);
        assert!((ndcg_of(&[1, 2, 7], &[7], 20) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_of(&[1, 2, 3], &[7], 20), 0.0);
    }

    #[test]
    fn hr_is_recall() {
        assert_eq!(hr_of(&[1, 2, 3, 4], &[1, 2, 3], 20), 1.0);
        assert_eq!(hr_of(&[1, 9, 8], &[1, 2, 3, 4], 20), 0.25);
        assert_eq!(hr_of(&[9], &[1], 20), 0.0);
    }

    #[test]
    fn truncation_applies() {
        assert_eq!(ndcg_of(&[1, 2, 3], &[3], 2), 0.0);
        assert_eq!(hr_of(&[1, 2, 3], &[3], 2), 0.0);
    }
}
