//! User-item bipartite graph, degree-based node importance, and selection of
//! core / edge / random unlearning sets.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub user_adj: Vec<Vec<usize>>,
    pub item_adj: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    User(usize),
    Item(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeImportance {
    pub node: Node,
    pub centrality: usize,
    pub importance: f64,
}

impl BipartiteGraph {
    pub fn build(train: &InteractionSet) -> Self {
        let mut user_adj = vec![Vec::new(); train.num_users];
        let mut item_adj = vec![Vec::new(); train.num_items];
        for &(u, i) in &train.interactions {
            user_adj[u].push(i);
            item_adj[i].push(u);
        }
        for adj in user_adj.iter_mut().chain(item_adj.iter_mut()) {
            adj.sort_unstable();
        }
        BipartiteGraph { user_adj, item_adj }
    }

    pub fn num_users(&self) -> usize {
        self.user_adj.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_adj.len()
    }

    pub fn degree(&self, node: Node) -> usize {
        self.neighbors(node).len()
    }

    pub fn neighbors(&self, node: Node) -> &[usize] {
        match node {
            Node::User(u) => &self.user_adj[u],
            Node::Item(i) => &self.item_adj[i],
        }
    }

    /// Degree times mean neighbour degree; zero for isolated nodes.
    pub fn importance(&self, node: Node) -> Result<NodeImportance> {
        let (exists, other): (bool, &Vec<Vec<usize>>) = match node {
            Node::User(u) => (u < self.user_adj.len(), &self.item_adj),
            Node::Item(i) => (i < self.item_adj.len(), &self.user_adj),
        };
        if !exists {
            return Err(Error::invalid(format!("{node:?} not in graph")));
        }
        let nbrs = self.neighbors(node);
        let centrality = nbrs.len();
        let importance = if centrality == 0 {
            0.0
        } else {
            let sum: usize = nbrs.iter().map(|&y| other[y].len()).sum();
            centrality as f64 * (sum as f64 / centrality as f64)
        };
        Ok(NodeImportance {
            node,
            centrality,
            importance,
        })
    }

    pub fn user_importance(&self) -> Vec<f64> {
        (0..self.num_users())
            .map(|u| self.importance(Node::User(u)).map(|n| n.importance).unwrap_or(0.0))
            .collect()
    }

    pub fn item_importance(&self) -> Vec<f64> {
        (0..self.num_items())
            .map(|i| self.importance(Node::Item(i)).map(|n| n.importance).unwrap_or(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Core,
    Random,
    Edge,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Core, Strategy::Random, Strategy::Edge];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Core => "core",
            Strategy::Random => "random",
            Strategy::Edge => "edge",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "core" => Ok(Strategy::Core),
            "random" => Ok(Strategy::Random),
            "edge" => Ok(Strategy::Edge),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// What the unlearning ratio is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioBasis {
    /// Fraction of training interactions.
    #[default]
    Interactions,
    /// Fraction of training users.
    Users,
}

impl FromStr for RatioBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interactions" => Ok(RatioBasis::Interactions),
            "users" => Ok(RatioBasis::Users),
            other => Err(Error::invalid(format!("unknown ratio basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnSet {
    pub strategy: Strategy,
    /// Ascending user indices.
    pub users: Vec<usize>,
    /// Training interactions of `users`.
    pub interactions: Vec<(usize, usize)>,
    pub ratio: f64,
}

impl UnlearnSet {
    pub fn empty(strategy: Strategy) -> Self {
        UnlearnSet {
            strategy,
            users: Vec::new(),
            interactions: Vec::new(),
            ratio: 0.0,
        }
    }

    pub fn contains_user(&self, u: usize) -> bool {
        self.users.binary_search(&u).is_ok()
    }

    /// Builds a set for an explicit list of users.
    pub fn for_users(strategy: Strategy, users: &[usize], train: &InteractionSet) -> Self {
        let mut users = users.to_vec();
        users.sort_unstable();
        users.dedup();
        let interactions = train
            .interactions
            .iter()
            .copied()
            .filter(|(u, _)| users.binary_search(u).is_ok())
            .collect::<Vec<_>>();
        let ratio = if train.is_empty() {
            0.0
        } else {
            interactions.len() as f64 / train.len() as f64
        };
        UnlearnSet {
            strategy,
            users,
            interactions,
            ratio,
        }
    }
}

/// Orders training users by importance (core: descending, edge: ascending,
/// random: seeded shuffle) and takes users until the target is first reached.
pub fn select_unlearn_set(
    g: &BipartiteGraph,
    train: &InteractionSet,
    strategy: Strategy,
    ratio: f64,
    seed: u64,
    basis: RatioBasis,
) -> Result<UnlearnSet> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("ratio {ratio} outside [0, 1]")));
    }
    let candidates: Vec<usize> = (0..g.num_users()).filter(|&u| !g.user_adj[u].is_empty()).collect();
    let importance = g.user_importance();

    let mut order = candidates.clone();
    match strategy {
        Strategy::Core => order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b))),
        Strategy::Edge => order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b))),
        Strategy::Random => order.shuffle(&mut rng::rng(seed)),
    }

    let (target, weight): (f64, Box<dyn Fn(usize) -> f64>) = match basis {
        RatioBasis::Interactions => (ratio * train.len() as f64, Box::new(|u| g.user_adj[u].len() as f64)),
        RatioBasis::Users => (ratio * candidates.len() as f64, Box::new(|_| 1.0)),
    };

    let mut picked = Vec::new();
    let mut acc = 0.0;
    let mut it = order.into_iter();
    // Guard against float noise when the target is hit exactly.
    while acc < target - 1e-9 {
        match it.next() {
            Some(u) => {
                acc += weight(u);
                picked.push(u);
            }
            None => return Err(Error::RatioUnreachable { ratio }),
        }
    }
    let mut set = UnlearnSet::for_users(strategy, &picked, train);
    set.ratio = ratio;
    Ok(set)
}
