//! Python bindings for `recforget`.

#![allow(clippy::useless_conversion)]

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use recforget::dataset::{self, InteractionSet};
use recforget::eval;
use recforget::graph::{BipartiteGraph, RatioBasis, Strategy, UnlearnSet};
use recforget::harness::{self, ExperimentConfig, ResultRow};
use recforget::model::{self, Hyperparams, ModelKind, Recommender};
use recforget::unlearn::{self, Method, PreparedState, Serving, SharedArtifacts, UnlearnContext};

fn to_py(e: recforget::Error) -> PyErr {
    match e {
        recforget::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = recforget::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A set of (user, item) interactions over a fixed index space.
#[pyclass(name = "Interactions", module = "pyrecforget")]
#[derive(Clone)]
struct PyInteractions {
    inner: Arc<InteractionSet>,
}

#[pymethods]
impl PyInteractions {
    #[new]
    fn new(pairs: Vec<(usize, usize)>, num_users: usize, num_items: usize) -> PyResult<Self> {
        let inner = InteractionSet::from_pairs(pairs, num_users, num_items).map_err(to_py)?;
        Ok(PyInteractions { inner: Arc::new(inner) })
    }

    /// Reads a MovieLens-style ratings file and applies the k-core filter.
    #[staticmethod]
    #[pyo3(signature = (path, min_interactions = 5))]
    fn load(path: PathBuf, min_interactions: usize) -> PyResult<Self> {
        let raw = dataset::load_ratings(path).map_err(to_py)?;
        let inner = dataset::preprocess(&raw, min_interactions).map_err(to_py)?;
        Ok(PyInteractions { inner: Arc::new(inner) })
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.interactions.clone()
    }

    fn user_degrees(&self) -> Vec<usize> {
        self.inner.user_degrees()
    }

    /// 80/10/10 per-user split into (train, valid, test).
    fn split(&self, seed: u64) -> PyResult<(Self, Self, Self)> {
        let sp = dataset::split(&self.inner, (0.8, 0.1, 0.1), seed).map_err(to_py)?;
        let wrap = |s| PyInteractions { inner: Arc::new(s) };
        Ok((wrap(sp.train), wrap(sp.valid), wrap(sp.test)))
    }

    /// Importance of every user and every item in the bipartite graph.
    fn importance(&self) -> (Vec<f64>, Vec<f64>) {
        let g = BipartiteGraph::build(&self.inner);
        (g.user_importance(), g.item_importance())
    }

    /// Users chosen for unlearning by `strategy` ("core", "random", "edge").
    #[pyo3(signature = (strategy, ratio, seed, basis = "interactions"))]
    fn select_unlearn_users(&self, strategy: &str, ratio: f64, seed: u64, basis: &str) -> PyResult<Vec<usize>> {
        let basis: RatioBasis = parse(basis)?;
        let g = BipartiteGraph::build(&self.inner);
        let set = recforget::graph::select_unlearn_set(&g, &self.inner, parse(strategy)?, ratio, seed, basis)
            .map_err(to_py)?;
        Ok(set.users)
    }

    fn __repr__(&self) -> String {
        format!(
            "Interactions(users={}, items={}, interactions={})",
            self.inner.num_users,
            self.inner.num_items,
            self.inner.len()
        )
    }
}

fn hyper_from(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Hyperparams> {
    let mut h = Hyperparams::default();
    let Some(kw) = kwargs else {
        return Ok(h);
    };
    for (k, v) in kw.iter() {
        let key: String = k.extract()?;
        match key.as_str() {
            "embedding_dim" => h.embedding_dim = v.extract()?,
            "batch_size" => h.batch_size = v.extract()?,
            "learning_rate" => h.learning_rate = v.extract()?,
            "max_epochs" => h.max_epochs = v.extract()?,
            "patience" => h.patience = v.extract()?,
            "negatives_per_positive" => h.negatives_per_positive = v.extract()?,
            "wmf_negative_weight" => h.wmf_negative_weight = v.extract()?,
            "wmf_dense" => h.wmf_dense = v.extract()?,
            "lightgcn_layers" => h.lightgcn_layers = v.extract()?,
            "l2_reg" => h.l2_reg = v.extract()?,
            "init_std" => h.init_std = v.extract()?,
            other => return Err(PyValueError::new_err(format!("unknown hyperparameter {other:?}"))),
        }
    }
    h.validate().map_err(to_py)?;
    Ok(h)
}

/// A trained recommender, or an ensemble of shard submodels.
#[pyclass(name = "Model", module = "pyrecforget")]
struct PyModel {
    serving: Serving,
}

#[pymethods]
impl PyModel {
    fn score(&self, user: usize, item: usize) -> PyResult<f64> {
        let mut out = vec![0.0; self.serving.num_items()];
        self.serving.score_items(user, &mut out).map_err(to_py)?;
        out.get(item)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("item {item} out of range")))
    }

    /// Top-`k` unseen items for `user`.
    #[pyo3(signature = (user, k = 20))]
    fn recommend(&self, user: usize, k: usize) -> PyResult<Vec<usize>> {
        let seen = self.serving.seen_items(user).to_vec();
        model::score_topk(&self.serving, user, k, &seen).map_err(to_py)
    }

    #[pyo3(signature = (test, k = 20))]
    fn ndcg(&self, test: &PyInteractions, k: usize) -> f64 {
        eval::ndcg_at_k(&self.serving, &test.inner, k)
    }

    #[pyo3(signature = (test, k = 20))]
    fn hit_ratio(&self, test: &PyInteractions, k: usize) -> f64 {
        eval::hr_at_k(&self.serving, &test.inner, k)
    }

    #[getter]
    fn num_shards(&self) -> usize {
        self.serving.as_ensemble().map_or(1, |e| e.num_shards())
    }

    /// Aggregator weights of an ensemble; `[1.0]` for a single model.
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.serving.as_ensemble().map_or(vec![1.0], |e| e.weights.clone())
    }
}

/// Trains a model with early stopping on `valid`. Keyword arguments override
/// hyperparameters.
#[pyfunction]
#[pyo3(signature = (kind, train, valid, seed = 0, **kwargs))]
fn train_model(
    kind: &str,
    train: &PyInteractions,
    valid: &PyInteractions,
    seed: u64,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyModel> {
    let kind: ModelKind = parse(kind)?;
    let hyper = hyper_from(kwargs)?;
    let (m, _) = model::train(kind, &train.inner, &valid.inner, &hyper, seed).map_err(to_py)?;
    Ok(PyModel {
        serving: Serving::Single(Arc::new(m)),
    })
}

/// One unlearning method prepared on a training set.
#[pyclass(name = "Unlearner", module = "pyrecforget")]
struct PyUnlearner {
    ctx: UnlearnContext,
    state: PreparedState,
}

#[pymethods]
impl PyUnlearner {
    #[new]
    #[pyo3(signature = (method, kind, train, valid, num_shards = 10, seed = 0, **kwargs))]
    fn new(
        method: &str,
        kind: &str,
        train: &PyInteractions,
        valid: &PyInteractions,
        num_shards: usize,
        seed: u64,
        kwargs: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let method: Method = parse(method)?;
        let mut ctx = UnlearnContext::new(
            parse(kind)?,
            (*train.inner).clone(),
            (*valid.inner).clone(),
            hyper_from(kwargs)?,
            seed,
        );
        ctx.num_shards = num_shards;
        let state = unlearn::prepare(method, &ctx, &SharedArtifacts::default()).map_err(to_py)?;
        Ok(PyUnlearner { ctx, state })
    }

    /// The model before any unlearning.
    fn model(&self) -> PyModel {
        PyModel {
            serving: self.state.serving.clone(),
        }
    }

    /// Removes every training interaction of `users`. Returns the updated
    /// model and the stage wall time in seconds.
    fn unlearn(&self, users: Vec<usize>) -> PyResult<(PyModel, f64)> {
        let mut users = users;
        users.sort_unstable();
        users.dedup();
        let request = UnlearnSet::for_users(Strategy::Random, &users, &self.ctx.train);
        let out = unlearn::unlearn(&self.state, &self.ctx, &request).map_err(to_py)?;
        Ok((PyModel { serving: out.serving }, out.wall_time_seconds))
    }
}

fn row_dict<'py>(py: Python<'py>, r: &ResultRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("dataset", &r.dataset)?;
    d.set_item("model", &r.model)?;
    d.set_item("method", &r.method)?;
    d.set_item("strategy", &r.strategy)?;
    d.set_item("ratio", r.ratio)?;
    d.set_item("num_shards", r.num_shards)?;
    d.set_item("status", &r.status)?;
    d.set_item("ndcg20", r.ndcg20)?;
    d.set_item("hr20", r.hr20)?;
    d.set_item("mio_accuracy", r.mio_accuracy)?;
    d.set_item("a_igf", r.a_igf)?;
    d.set_item("shard_gf", r.shard_gf)?;
    d.set_item("unlearned_users", r.unlearned_users)?;
    d.set_item("unlearned_interactions", r.unlearned_interactions)?;
    Ok(d)
}

/// Runs the experiment described by a TOML file and returns the result
/// rows. Writes the CSV outputs when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir = None))]
fn run_experiment(py: Python<'_>, config_path: PathBuf, out_dir: Option<PathBuf>) -> PyResult<Vec<Bound<'_, PyDict>>> {
    let cfg = ExperimentConfig::load(&config_path).map_err(to_py)?;
    let out = py.allow_threads(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        harness::emit_results(&out, &dir).map_err(to_py)?;
    }
    out.baseline.iter().chain(&out.rows).map(|r| row_dict(py, r)).collect()
}

/// NDCG@k of a ranked list against relevant items.
#[pyfunction]
fn ndcg_at_k(ranked: Vec<usize>, mut relevant: Vec<usize>, k: usize) -> f64 {
    relevant.sort_unstable();
    relevant.dedup();
    eval::ndcg_of(&ranked, &relevant, k)
}

/// Hits in the top k over the number of relevant items.
#[pyfunction]
fn hr_at_k(ranked: Vec<usize>, mut relevant: Vec<usize>, k: usize) -> f64 {
    relevant.sort_unstable();
    relevant.dedup();
    eval::hr_of(&ranked, &relevant, k)
}

#[pymodule]
fn pyrecforget(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInteractions>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyUnlearner>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    Ok(())
}
