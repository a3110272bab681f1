//! Python bindings: datasets, episodes, models, training and evaluation.

use eckpn::episode::io::{read_dataset, write_dataset};
use eckpn::episode::{gen_synthetic_dataset, sample_episode, DataConfig, Split};
use eckpn::harness::{self, load_checkpoint, save_checkpoint};
use eckpn::inference::LossWeights;
use eckpn::tensor::{grad_check, ParamStore};
use eckpn::{forward_episode, Error};
use pyo3::exceptions::{PyKeyError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Episode(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Format { .. } => PyOSError::new_err(e.to_string()),
        Error::Engine(_) | Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn split(name: &str) -> PyResult<Split> {
    name.parse().map_err(py_err)
}

fn rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Class prototypes, semantic embeddings and class splits.
#[pyclass(frozen)]
struct Dataset(eckpn::episode::Dataset);

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (classes=100, raw_dim=32, semantic_dim=16, stddev=0.5, coupling=1.0, seed=0))]
    fn synthetic(classes: usize, raw_dim: usize, semantic_dim: usize, stddev: f64, coupling: f64, seed: u64) -> PyResult<Self> {
        gen_synthetic_dataset(&DataConfig {
            class_count: classes,
            raw_dim,
            semantic_dim,
            within_class_stddev: stddev,
            semantic_coupling: coupling,
            seed,
            ..DataConfig::default()
        })
        .map(Self)
        .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        read_dataset(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_dataset(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count
    }

    #[getter]
    fn raw_dim(&self) -> usize {
        self.0.raw_dim
    }

    #[getter]
    fn semantic_dim(&self) -> usize {
        self.0.semantic_dim
    }

    fn classes(&self, split_name: &str) -> PyResult<Vec<usize>> {
        Ok(self.0.classes(split(split_name)?).to_vec())
    }

    /// Nearest-centroid accuracy on `count` seeded episodes.
    #[pyo3(signature = (split_name="test", ways=5, shots=1, queries=5, count=200, seed=0))]
    fn centroid_accuracy(&self, split_name: &str, ways: usize, shots: usize, queries: usize, count: usize, seed: u64) -> PyResult<f64> {
        let spec = eckpn::episode::EpisodeSpec { ways, shots, queries, label_ratio: 1.0 };
        let eps = harness::eval::eval_episodes(&self.0, split(split_name)?, &spec, count, seed).map_err(py_err)?;
        Ok(eckpn::episode::nearest_centroid_accuracy(&eps))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(classes={}, raw_dim={}, semantic_dim={})",
            self.0.class_count, self.0.raw_dim, self.0.semantic_dim
        )
    }
}

/// One N-way K-shot task.
#[pyclass(frozen)]
struct Episode(eckpn::episode::Episode);

#[pymethods]
impl Episode {
    #[staticmethod]
    #[pyo3(signature = (dataset, split_name="train", ways=5, shots=1, queries=5, label_ratio=1.0, seed=0))]
    fn sample(
        dataset: &Dataset,
        split_name: &str,
        ways: usize,
        shots: usize,
        queries: usize,
        label_ratio: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = eckpn::episode::EpisodeSpec { ways, shots, queries, label_ratio };
        sample_episode(&dataset.0, split(split_name)?, &spec, seed).map(Self).map_err(py_err)
    }

    #[getter]
    fn ways(&self) -> usize {
        self.0.ways
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    #[getter]
    fn is_support(&self) -> Vec<bool> {
        self.0.is_support.clone()
    }

    #[getter]
    fn is_labeled(&self) -> Vec<bool> {
        self.0.is_labeled.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.0.features)
    }

    fn query_indices(&self) -> Vec<usize> {
        self.0.query_indices()
    }

    fn __len__(&self) -> usize {
        self.0.rows()
    }
}

/// Training hyperparameters; keyword arguments set fields by name.
#[pyclass]
struct TrainConfig(harness::TrainConfig);

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = harness::TrainConfig::default();
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                cfg.set(&key, &value).map_err(py_err)?;
            }
        }
        cfg.validate().map_err(py_err)?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        harness::TrainConfig::from_file(path).map(Self).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.0.get(key).ok_or_else(|| PyKeyError::new_err(key.to_string()))
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.0.set(key, &value.str()?.to_string()).map_err(py_err)
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        harness::TrainConfig::KEYS.to_vec()
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn __repr__(&self) -> String {
        let fields: Vec<String> = harness::TrainConfig::KEYS
            .iter()
            .map(|k| format!("{k}={}", self.0.get(k).unwrap_or_default()))
            .collect();
        format!("TrainConfig({})", fields.join(", "))
    }
}

/// Model parameters with their configuration.
#[pyclass(frozen)]
struct Model(eckpn::ModelParams);

#[pymethods]
impl Model {
    #[staticmethod]
    fn init(config: &TrainConfig, raw_dim: usize, seed: u64) -> PyResult<Self> {
        eckpn::ModelParams::init(&config.0.model_config(raw_dim), seed)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.0, path).map_err(py_err)
    }

    fn param_names(&self) -> Vec<String> {
        self.0.store.tensors().iter().map(|t| t.name.clone()).collect()
    }

    fn param(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        self.0
            .store
            .get(name)
            .map(|t| rows(&t.value))
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    #[getter]
    fn ablation(&self) -> String {
        self.0.config.ablation.to_string()
    }

    /// Predicted class per query, in row order.
    fn predict(&self, episode: &Episode) -> PyResult<Vec<usize>> {
        let out = forward_episode(&self.0, &episode.0, None).map_err(py_err)?;
        Ok(out.predictions())
    }

    /// Class probabilities per query, in row order.
    fn probabilities(&self, episode: &Episode) -> PyResult<Vec<Vec<f64>>> {
        let out = forward_episode(&self.0, &episode.0, None).map_err(py_err)?;
        Ok(rows(out.graph.value(out.probs)))
    }

    /// Loss components for one episode.
    fn losses<'py>(&self, py: Python<'py>, episode: &Episode) -> PyResult<Bound<'py, PyDict>> {
        let w = LossWeights::default();
        let out = forward_episode(&self.0, &episode.0, Some(w)).map_err(py_err)?;
        let b = out.loss_breakdown(w).expect("losses requested");
        let d = PyDict::new(py);
        d.set_item("adjacency", b.adjacency)?;
        d.set_item("assignment", b.assignment)?;
        d.set_item("classification", b.classification)?;
        d.set_item("total", b.total)?;
        Ok(d)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients of the total loss over all parameters.
    #[pyo3(signature = (episode, eps=1e-5))]
    fn gradient_check(&self, episode: &Episode, eps: f64) -> PyResult<f64> {
        let builder = |store: &ParamStore| {
            let p = eckpn::ModelParams {
                store: store.clone(),
                ..self.0.clone()
            };
            let out = forward_episode(&p, &episode.0, Some(LossWeights::default()))?;
            Ok((out.graph, out.losses.expect("losses requested").total))
        };
        let report = grad_check(builder, &self.0.store, eps, 1e-4).map_err(py_err)?;
        Ok(report.max_rel_error())
    }
}

#[pyclass(frozen, get_all)]
struct MetricsRow {
    iteration: usize,
    loss_total: f64,
    loss_adj: f64,
    loss_assign: f64,
    loss_cls: f64,
    train_acc: f64,
    val_acc: Option<f64>,
    lr: f64,
    skipped: bool,
}

#[pyclass(frozen, get_all)]
struct TrainResult {
    best: Py<Model>,
    last: Py<Model>,
    best_iteration: usize,
    best_val_acc: f64,
    metrics: Vec<Py<MetricsRow>>,
    skipped: usize,
    failed: bool,
}

#[pyfunction]
fn train(py: Python<'_>, config: &TrainConfig, dataset: &Dataset) -> PyResult<TrainResult> {
    let out = harness::train(&config.0, &dataset.0).map_err(py_err)?;
    let metrics = out
        .metrics
        .iter()
        .map(|m| {
            Py::new(
                py,
                MetricsRow {
                    iteration: m.iteration,
                    loss_total: m.loss_total,
                    loss_adj: m.loss_adj,
                    loss_assign: m.loss_assign,
                    loss_cls: m.loss_cls,
                    train_acc: m.train_acc,
                    val_acc: m.val_acc,
                    lr: m.lr,
                    skipped: m.skipped,
                },
            )
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(TrainResult {
        best: Py::new(py, Model(out.best_params))?,
        last: Py::new(py, Model(out.final_params))?,
        best_iteration: out.best_iteration,
        best_val_acc: out.best_val_acc,
        metrics,
        skipped: out.skipped,
        failed: out.failed,
    })
}

/// Mean accuracy and 95% interval half-width over seeded episodes.
#[pyfunction]
#[pyo3(signature = (model, dataset, config, split_name="test", episodes=None))]
fn evaluate(model: &Model, dataset: &Dataset, config: &TrainConfig, split_name: &str, episodes: Option<usize>) -> PyResult<(f64, f64)> {
    let mut spec = config.0.episode_spec();
    spec.ways = model.0.config.ways;
    let count = episodes.unwrap_or(config.0.eval_episodes);
    let report =
        harness::evaluate_parallel(&model.0, &dataset.0, split(split_name)?, &spec, count, config.0.seed).map_err(py_err)?;
    Ok((report.mean_accuracy, report.ci95))
}

#[pymodule]
#[pyo3(name = "eckpn")]
fn eckpn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ABLATIONS", eckpn::Ablation::ALL.iter().map(|a| a.to_string()).collect::<Vec<_>>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Episode>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<MetricsRow>()?;
    m.add_class::<TrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
