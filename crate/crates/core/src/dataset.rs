//! Rating ingestion, implicit-feedback preprocessing, random splits and
//! negative sampling.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// One line of a MovieLens-style `user\titem\trating\ttimestamp` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub rating: u8,
    pub timestamp: i64,
}

/// Dense index <-> external id maps for one side of the interaction matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    fn from_sorted(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        IdMap { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn external(&self, idx: usize) -> Option<&str> {
        self.ids.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

/// Deduplicated implicit interactions over a fixed dense index space.
///
/// Splits and filtered views share the parent's `IdMaps` and counts, so user
/// and item indices are comparable across all sets derived from one
/// preprocessing run.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    pub interactions: Vec<(usize, usize)>,
    pub num_users: usize,
    pub num_items: usize,
    pub id_maps: Arc<IdMaps>,
}

impl InteractionSet {
    /// Builds a set over an explicit index space, dropping duplicate pairs.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        num_users: usize,
        num_items: usize,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut interactions = Vec::new();
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(Error::invalid(format!(
                    "pair ({u}, {i}) outside index space {num_users}x{num_items}"
                )));
            }
            if seen.insert((u, i)) {
                interactions.push((u, i));
            }
        }
        Ok(InteractionSet {
            interactions,
            num_users,
            num_items,
            id_maps: Arc::new(IdMaps::default()),
        })
    }

    /// A new set with the same index space and id maps.
    pub fn with_interactions(&self, interactions: Vec<(usize, usize)>) -> Self {
        InteractionSet {
            interactions,
            num_users: self.num_users,
            num_items: self.num_items,
            id_maps: Arc::clone(&self.id_maps),
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Sorted item lists per user.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.interactions {
            out[u].push(i);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_users];
        for &(u, _) in &self.interactions {
            deg[u] += 1;
        }
        deg
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for &(_, i) in &self.interactions {
            deg[i] += 1;
        }
        deg
    }

    /// Users with at least one interaction, ascending.
    pub fn active_users(&self) -> Vec<usize> {
        self.user_degrees()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(u, _)| u)
            .collect()
    }

    /// Keeps only interactions whose user satisfies `keep`.
    pub fn filter_users(&self, keep: impl Fn(usize) -> bool) -> Self {
        self.with_interactions(self.interactions.iter().copied().filter(|&(u, _)| keep(u)).collect())
    }

    /// Fraction of the user x item matrix without an interaction.
    pub fn sparsity(&self) -> f64 {
        let cells = (self.num_users * self.num_items) as f64;
        if cells == 0.0 {
            return 1.0;
        }
        1.0 - self.len() as f64 / cells
    }
}

/// Reads a tab-separated `user item rating timestamp` file.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<RawRating>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text)
}

pub fn parse_ratings(text: &str) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty user or item id".into(),
            });
        }
        let rating: u8 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad rating {:?}", fields[2]),
        })?;
        if !(1..=5).contains(&rating) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("rating {rating} outside 1..5"),
            });
        }
        let timestamp: i64 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad timestamp {:?}", fields[3]),
        })?;
        out.push(RawRating {
            user: user.to_string(),
            item: item.to_string(),
            rating,
            timestamp,
        });
    }
    Ok(out)
}

// Numeric ids sort numerically, everything else lexicographically after them.
fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Converts ratings to implicit positives and applies the k-core filter
/// repeatedly until every remaining user and item has `min_interactions`.
pub fn preprocess(raw: &[RawRating], min_interactions: usize) -> Result<InteractionSet> {
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pairs: HashSet<(&str, &str)> = raw.iter().map(|r| (r.user.as_str(), r.item.as_str())).collect();

    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for &(u, i) in &pairs {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let before = pairs.len();
        pairs.retain(|(u, i)| user_deg[u] >= min_interactions && item_deg[i] >= min_interactions);
        if pairs.len() == before {
            break;
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut users: Vec<String> = pairs.iter().map(|(u, _)| u.to_string()).collect();
    let mut items: Vec<String> = pairs.iter().map(|(_, i)| i.to_string()).collect();
    for ids in [&mut users, &mut items] {
        ids.sort_by(|a, b| cmp_ids(a, b));
        ids.dedup();
    }
    let maps = IdMaps {
        users: IdMap::from_sorted(users),
        items: IdMap::from_sorted(items),
    };
    let mut interactions: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(u, i)| (maps.users.index[*u], maps.items.index[*i]))
        .collect();
    interactions.sort_unstable();

    Ok(InteractionSet {
        interactions,
        num_users: maps.users.len(),
        num_items: maps.items.len(),
        id_maps: Arc::new(maps),
    })
}

/// Train / validation / test parts over one index space.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
}

/// Uniform interaction-level split. Part sizes are rounded from the first
/// two fractions; the test part takes the remainder.
pub fn split(ds: &InteractionSet, fractions: (f64, f64, f64), seed: u64) -> Result<SplitBundle> {
    let (f_train, f_valid, f_test) = fractions;
    if [f_train, f_valid, f_test].iter().any(|f| !(0.0..=1.0).contains(f))
        || ((f_train + f_valid + f_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));

    let n_train = ((n as f64) * f_train).round() as usize;
    let n_valid = (((n as f64) * f_valid).round() as usize).min(n - n_train);

    let take = |range: &[usize]| {
        let mut part: Vec<(usize, usize)> = range.iter().map(|&k| ds.interactions[k]).collect();
        part.sort_unstable();
        ds.with_interactions(part)
    };
    Ok(SplitBundle {
        train: take(&order[..n_train]),
        valid: take(&order[n_train..n_train + n_valid]),
        test: take(&order[n_train + n_valid..]),
        seed,
    })
}

/// Negatives per training positive, aligned with `train.interactions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSampleTable {
    pub negatives: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Draws `k` distinct non-interacted items per positive, uniformly.
pub fn sample_negatives(train: &InteractionSet, k: usize, seed: u64) -> Result<NegativeSampleTable> {
    if k == 0 {
        return Err(Error::invalid("negatives per positive must be >= 1"));
    }
    let user_items = train.user_items();
    Ok(sample_negatives_with(train, &user_items, k, seed))
}

/// Same as [`sample_negatives`] with a precomputed per-user positive index.
pub(crate) fn sample_negatives_with(
    train: &InteractionSet,
    user_items: &[Vec<usize>],
    k: usize,
    seed: u64,
) -> NegativeSampleTable {
    let mut rng = rng::rng(seed);
    let m = train.num_items;
    let mut negatives = Vec::with_capacity(train.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for &(u, _) in &train.interactions {
        let positives = &user_items[u];
        let available = m - positives.len();
        chosen.clear();
        if available <= k || available < 2 * k {
            // Small pool: enumerate and partially shuffle.
            let mut pool: Vec<usize> = (0..m).filter(|j| positives.binary_search(j).is_err()).collect();
            let take = k.min(pool.len());
            let (head, _) = pool.partial_shuffle(&mut rng, take);
            chosen.extend_from_slice(head);
        } else {
            while chosen.len() < k {
                let j = rng.gen_range(0..m);
                if positives.binary_search(&j).is_err() && !chosen.contains(&j) {
                    chosen.push(j);
                }
            }
        }
        negatives.push(chosen.clone());
    }
    NegativeSampleTable { negatives, seed }
}
