//! Membership inference oracle: a small MLP that tells training users from
//! never-trained users by their embedding features.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, TrainedModel};
use crate::rng;

pub const MIO_HIDDEN: [usize; 3] = [64, 16, 4];
pub const MIO_EPOCHS: usize = 100;
pub const MIO_LEARNING_RATE: f64 = 0.001;

/// Source of the embedding table used to featurise a given user.
pub trait FeatureSource {
    fn feature_table(&self, user: usize) -> &EmbeddingTable;
}

impl FeatureSource for TrainedModel {
    fn feature_table(&self, _user: usize) -> &EmbeddingTable {
        self.scoring_embeddings()
    }
}

impl FeatureSource for EmbeddingTable {
    fn feature_table(&self, _user: usize) -> &EmbeddingTable {
        self
    }
}

/// `concat(user_vec, mean(item_vecs))`.
pub fn mio_features(t: &EmbeddingTable, user: usize, items: &[usize]) -> Result<Vec<f64>> {
    if user >= t.num_users {
        return Err(Error::UnknownUser(user));
    }
    if items.is_empty() {
        return Err(Error::invalid(format!("user {user} has no interactions to featurise")));
    }
    let d = t.dim;
    let mut f = Vec::with_capacity(2 * d);
    f.extend_from_slice(t.user(user));
    f.resize(2 * d, 0.0);
    for &i in items {
        for (a, b) in f[d..].iter_mut().zip(t.item(i)) {
            *a += b;
        }
    }
    let n = items.len() as f64;
    f[d..].iter_mut().for_each(|x| *x /= n);
    Ok(f)
}

pub trait MembershipClassifier {
    fn is_member(&self, features: &[f64]) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut impl rand::Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        Dense {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            self.b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        }));
    }
}

/// Three ReLU layers (64, 16, 4) and a two-way softmax head. Inputs are
/// standardised with statistics of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct MioModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<Dense>,
}

impl MioModel {
    pub fn feature_dim(&self) -> usize {
        self.mean.len()
    }

    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Returns activations of every layer (input first) and the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![self.standardise(x)];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(acts.last().expect("non-empty"), &mut out);
            if k + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// `[p(non-member), p(member)]`.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let acts = self.forward(x);
        softmax2(acts.last().expect("logits"))
    }

    fn sgd_step(&mut self, x: &[f64], label: usize, lr: f64) {
        let acts = self.forward(x);
        let p = softmax2(acts.last().expect("logits"));
        // d(CE)/d(logits) = p - onehot
        let mut delta: Vec<f64> = vec![p[0], p[1]];
        delta[label] -= 1.0;
        for k in (0..self.layers.len()).rev() {
            let input = &acts[k];
            let layer = &self.layers[k];
            let mut prev = vec![0.0; layer.inputs];
            if k > 0 {
                for (row, d) in layer.w.chunks_exact(layer.inputs).zip(&delta) {
                    for (pv, w) in prev.iter_mut().zip(row) {
                        *pv += d * w;
                    }
                }
                // ReLU derivative of the layer below
                for (pv, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *pv = 0.0;
                    }
                }
            }
            let layer = &mut self.layers[k];
            for ((row, b), d) in layer.w.chunks_exact_mut(layer.inputs).zip(&mut layer.b).zip(&delta) {
                for (w, a) in row.iter_mut().zip(input) {
                    *w -= lr * d * a;
                }
                *b -= lr * d;
            }
            delta = prev;
        }
    }
}

impl MembershipClassifier for MioModel {
    fn is_member(&self, features: &[f64]) -> bool {
        let p = self.predict_proba(features);
        p[1] > p[0]
    }
}

fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

/// Trains the oracle on balanced member / non-member features with
/// per-sample SGD on cross-entropy.
pub fn train_mio(member: &[Vec<f64>], nonmember: &[Vec<f64>], seed: u64) -> Result<MioModel> {
    train_mio_with(member, nonmember, seed, MIO_EPOCHS, MIO_LEARNING_RATE)
}

pub fn train_mio_with(
    member: &[Vec<f64>],
    nonmember: &[Vec<f64>],
    seed: u64,
    epochs: usize,
    lr: f64,
) -> Result<MioModel> {
    if member.is_empty() || nonmember.is_empty() {
        return Err(Error::invalid(
            "membership oracle needs both member and non-member samples",
        ));
    }
    let dim = member[0].len();
    if member.iter().chain(nonmember).any(|x| x.len() != dim) {
        return Err(Error::invalid("inconsistent feature lengths"));
    }
    let mut rng = rng::rng(seed);
    let n = member.len().min(nonmember.len());
    let pick = |pool: &[Vec<f64>], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        idx.into_iter().map(|k| pool[k].clone()).collect()
    };
    let members = pick(member, &mut rng);
    let nonmembers = pick(nonmember, &mut rng);
    let data: Vec<(&Vec<f64>, usize)> = members
        .iter()
        .map(|x| (x, 1))
        .chain(nonmembers.iter().map(|x| (x, 0)))
        .collect();

    let mut mean = vec![0.0; dim];
    for (x, _) in &data {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= data.len() as f64);
    let mut scale = vec![0.0; dim];
    for (x, _) in &data {
        for ((s, v), m) in scale.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    scale
        .iter_mut()
        .for_each(|s| *s = (*s / data.len() as f64).sqrt().max(1e-12));

    let mut sizes = vec![dim];
    sizes.extend(MIO_HIDDEN);
    sizes.push(2);
    let layers = sizes.windows(2).map(|w| Dense::new(w[0], w[1], &mut rng)).collect();
    let mut model = MioModel { mean, scale, layers };

    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let (x, label) = data[k];
            model.sgd_step(x, label, lr);
        }
    }
    Ok(model)
}

/// Fraction of a balanced query set classified correctly: unlearned users
/// are labelled members, an equal-sized sample of holdout users non-members.
/// `items_of[u]` lists the interactions used to featurise user `u`.
pub fn mio_accuracy<C, F>(
    mio: &C,
    model: &F,
    unlearned: &[usize],
    holdout: &[usize],
    items_of: &[Vec<usize>],
    seed: u64,
) -> Result<f64>
where
    C: MembershipClassifier + ?Sized,
    F: FeatureSource + ?Sized,
{
    let usable = |users: &[usize]| -> Vec<usize> {
        users
            .iter()
            .copied()
            .filter(|&u| items_of.get(u).is_some_and(|v| !v.is_empty()))
            .collect()
    };
    let mut members = usable(unlearned);
    let mut nonmembers = usable(holdout);
    if nonmembers.is_empty() {
        return Err(Error::invalid("no holdout users available for membership queries"));
    }
    if members.is_empty() {
        return Err(Error::invalid("no unlearned users to query"));
    }
    let n = members.len().min(nonmembers.len());
    let mut rng = rng::rng(seed);
    members.shuffle(&mut rng);
    nonmembers.shuffle(&mut rng);
    members.truncate(n);
    nonmembers.truncate(n);

    let mut correct = 0usize;
    for &u in &members {
        let f = mio_features(model.feature_table(u), u, &items_of[u])?;
        correct += mio.is_member(&f) as usize;
    }
    for &u in &nonmembers {
        let f = mio_features(model.feature_table(u), u, &items_of[u])?;
        correct += (!mio.is_member(&f)) as usize;
    }
    Ok(correct as f64 / (2 * n) as f64)
}
