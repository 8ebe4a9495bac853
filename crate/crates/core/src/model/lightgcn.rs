use crate::dataset::InteractionSet;

use super::EmbeddingTable;

/// Layer-averaged propagation over the symmetrically normalised user-item
/// adjacency. The operator is symmetric, so the same routine maps output
/// gradients back onto the raw table.
#[derive(Debug, Clone)]
pub struct Propagator {
    layers: usize,
    user_adj: Vec<Vec<(usize, f64)>>,
    item_adj: Vec<Vec<(usize, f64)>>,
}

impl Propagator {
    pub fn new(train: &InteractionSet, layers: usize) -> Self {
        let du = train.user_degrees();
        let di = train.item_degrees();
        let mut user_adj = vec![Vec::new(); train.num_users];
        let mut item_adj = vec![Vec::new(); train.num_items];
        let mut pairs = train.interactions.clone();
        pairs.sort_unstable();
        for (u, i) in pairs {
            let w = 1.0 / ((du[u] * di[i]) as f64).sqrt();
            user_adj[u].push((i, w));
            item_adj[i].push((u, w));
        }
        Propagator {
            layers,
            user_adj,
            item_adj,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn propagate(&self, t: &EmbeddingTable) -> EmbeddingTable {
        if self.layers == 0 {
            return t.clone();
        }
        let d = t.dim;
        let mut acc = t.clone();
        let mut cur = t.clone();
        let mut next = EmbeddingTable::zeros(t.num_users, t.num_items, d);
        for _ in 0..self.layers {
            next.user_vecs.iter_mut().for_each(|x| *x = 0.0);
            next.item_vecs.iter_mut().for_each(|x| *x = 0.0);
            for (u, nbrs) in self.user_adj.iter().enumerate() {
                let row = &mut next.user_vecs[u * d..(u + 1) * d];
                for &(i, w) in nbrs {
                    for (r, x) in row.iter_mut().zip(cur.item(i)) {
                        *r += w * x;
                    }
                }
            }
            for (i, nbrs) in self.item_adj.iter().enumerate() {
                let row = &mut next.item_vecs[i * d..(i + 1) * d];
                for &(u, w) in nbrs {
                    for (r, x) in row.iter_mut().zip(cur.user(u)) {
                        *r += w * x;
                    }
                }
            }
            acc.axpy(1.0, &next);
            std::mem::swap(&mut cur, &mut next);
        }
        acc.scale(1.0 / (self.layers + 1) as f64);
        acc
    }
}
