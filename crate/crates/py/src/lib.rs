//! Python module `divsel`: feature files, probes, diversity scores,
//! clustering, selection, the discrete oracle and the full pipeline.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use divsel_core::corpus::{self, FeatureKind};
use divsel_core::diversity::{self, CentroidSet, Provenance, ScoreKind};
use divsel_core::harness::{self, PipelineError, Stage};
use divsel_core::importance;
use divsel_core::probe::{self, MlpParams};
use divsel_core::pseudolabel::{self, ClusterConfig};
use divsel_core::report::to_compact_json;
use divsel_core::selection;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else if e.stage == Stage::Input {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Serialize through JSON into plain Python objects.
fn to_py<T: Serialize + ?Sized>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = to_compact_json(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn score_kind(kind: &str) -> PyResult<ScoreKind> {
    match kind {
        "inter" => Ok(ScoreKind::Inter),
        "intra" => Ok(ScoreKind::Intra),
        other => Err(PyValueError::new_err(format!("kind must be 'inter' or 'intra', got {other:?}"))),
    }
}

/// Row-major feature vectors with sample ids.
#[pyclass(name = "FeatureMatrix", module = "divsel", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureMatrix {
    inner: corpus::FeatureMatrix,
}

#[pymethods]
impl PyFeatureMatrix {
    #[new]
    #[pyo3(signature = (ids, rows, kind = "embedding"))]
    fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, kind: &str) -> PyResult<Self> {
        let kind = match kind {
            "embedding" => FeatureKind::EmbeddingLayer,
            "hidden" => FeatureKind::HiddenLayer,
            other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
        };
        Ok(Self {
            inner: corpus::FeatureMatrix::from_rows(kind, ids, &rows).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Ok(Self {
            inner: corpus::FeatureMatrix::from_bytes(&bytes).map_err(value_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let bytes = self.inner.to_bytes().map_err(value_err)?;
        std::fs::write(path, bytes).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// A trained (or freshly initialized) probe network.
#[pyclass(name = "Probe", module = "divsel", skip_from_py_object)]
#[derive(Clone)]
pub struct PyProbe {
    inner: MlpParams,
}

#[pymethods]
impl PyProbe {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let (inner, _) = probe::parse_checkpoint(&bytes).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        probe::save_checkpoint(&self.inner, None, std::path::Path::new(path)).map_err(value_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims.clone()
    }

    #[getter]
    fn is_classifier(&self) -> bool {
        matches!(self.inner.head, probe::Head::Classifier { .. })
    }

    /// Raw outputs: logits for a classifier, the softplus value for a regressor.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(value_err)
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&x).map_err(value_err)
    }

    fn predictive_entropy(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predictive_entropy(&x).map_err(value_err)
    }

    /// Regressor scores for every row.
    fn score(&self, features: &PyFeatureMatrix) -> PyResult<Vec<f64>> {
        selection::score_pool(&self.inner, &features.inner).map_err(value_err)
    }
}

/// Pipeline configuration, round-tripped through its JSON form.
#[pyclass(name = "PipelineConfig", module = "divsel", from_py_object)]
#[derive(Clone)]
pub struct PyPipelineConfig {
    inner: harness::PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => harness::PipelineConfig::from_json(text).map_err(value_err)?,
            None => harness::PipelineConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        to_compact_json(&self.inner).map_err(value_err)
    }

    fn with_probe_seed(&self, seed: u64) -> Self {
        Self {
            inner: self.inner.clone().with_probe_seed(seed),
        }
    }
}

/// Outcome of `run_pipeline`.
#[pyclass(name = "PipelineResult", module = "divsel")]
pub struct PyPipelineResult {
    #[pyo3(get)]
    chosen_ids: Vec<String>,
    #[pyo3(get)]
    pool_ids: Vec<String>,
    #[pyo3(get)]
    scores: Vec<f64>,
    #[pyo3(get)]
    selection_digest: String,
    summary: harness::PipelineSummary,
    psi_dom: MlpParams,
    psi_div: MlpParams,
}

#[pymethods]
impl PyPipelineResult {
    #[getter]
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.summary)
    }

    #[getter]
    fn psi_dom(&self) -> PyProbe {
        PyProbe {
            inner: self.psi_dom.clone(),
        }
    }

    #[getter]
    fn psi_div(&self) -> PyProbe {
        PyProbe {
            inner: self.psi_div.clone(),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (config = None, out_dir = None))]
fn run_pipeline(py: Python<'_>, config: Option<PyPipelineConfig>, out_dir: Option<String>) -> PyResult<PyPipelineResult> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let out = py
        .detach(|| harness::run_pipeline(&cfg, out_dir.as_deref().map(std::path::Path::new)))
        .map_err(pipeline_err)?;
    Ok(PyPipelineResult {
        chosen_ids: out.selection.chosen_ids.clone(),
        pool_ids: out.selection.ids.clone(),
        scores: out.selection.scores.clone(),
        selection_digest: out.summary.selection_digest.clone(),
        summary: out.summary,
        psi_dom: out.psi_dom,
        psi_div: out.psi_div,
    })
}

/// Gaussian mixture: `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (n_domains = 4, per_domain = 500, dim = 32, separation = 10.0, std = 0.1, seed = 0))]
fn synthetic_mixture(
    n_domains: usize,
    per_domain: usize,
    dim: usize,
    separation: f64,
    std: f64,
    seed: u64,
) -> PyResult<(PyFeatureMatrix, Vec<usize>)> {
    let m = corpus::synthetic_mixture(&corpus::MixtureSpec {
        n_domains,
        per_domain_count: per_domain,
        dim,
        centroid_separation: separation,
        within_std: std,
        rng_seed: seed,
    })
    .map_err(value_err)?;
    Ok((PyFeatureMatrix { inner: m.features }, m.labels))
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    probe::softmax(&logits).map_err(value_err)
}

#[pyfunction]
fn entropy(probs: Vec<f64>) -> PyResult<f64> {
    probe::entropy(&probs).map_err(value_err)
}

/// Per-sample inter or intra diversity with centroids from `labels`.
#[pyfunction]
#[pyo3(signature = (features, labels, kind = "inter"))]
fn diversity_scores(features: &PyFeatureMatrix, labels: Vec<usize>, kind: &str) -> PyResult<Vec<f64>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let centroids = diversity::compute_centroids(&features.inner, &labels, k, None).map_err(value_err)?;
    Ok(diversity::score_samples(&features.inner, &labels, &centroids, score_kind(kind)?)
        .map_err(value_err)?
        .values)
}

/// Ids whose ascending rank lies in `[floor(N*lo/100), floor(N*hi/100))`.
#[pyfunction]
fn quantile_partition(ids: Vec<String>, values: Vec<f64>, lo: f64, hi: f64) -> PyResult<Vec<String>> {
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    Ok(diversity::quantile_partition(&refs, &values, lo, hi).map_err(value_err)?.ids)
}

/// K-means from the given initial centroids.
#[pyfunction]
#[pyo3(signature = (features, init, max_iters = 100, tol = 1e-6, freeze_centroids = false))]
fn cluster(
    py: Python<'_>,
    features: &PyFeatureMatrix,
    init: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
    freeze_centroids: bool,
) -> PyResult<Py<PyAny>> {
    let names = diversity::default_names(init.len());
    let init = CentroidSet::new(names, init, Provenance::Synthesized).map_err(value_err)?;
    let cfg = ClusterConfig {
        max_iters,
        tol,
        freeze_centroids,
    };
    let r = pseudolabel::cluster(&features.inner, &init, &cfg).map_err(value_err)?;
    to_py(py, &pseudolabel::ClusterReport::new(features.inner.ids(), &init, &r))
}

#[pyfunction]
fn select_top_fraction(ids: Vec<String>, scores: Vec<f64>, frac: f64) -> PyResult<Vec<String>> {
    selection::select_top_fraction(&ids, &scores, frac).map_err(value_err)
}

#[pyfunction]
fn overlap(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    selection::overlap(&a, &b).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 100))]
fn oracle_prop1(py: Python<'_>, seed: u64, instances: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &importance::decomposition_oracle(seed, instances))
}

#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 100))]
fn oracle_prop2(py: Python<'_>, seed: u64, instances: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &importance::approximation_oracle(seed, instances))
}

#[pyfunction]
#[pyo3(signature = (dim = 16, draws = 10, eps = 1e-4, seed = 0))]
fn grad_check(py: Python<'_>, dim: usize, draws: usize, eps: f64, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &probe::random_grad_check(dim, draws, eps, seed).map_err(value_err)?)
}

#[pymodule]
pub fn divsel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyProbe>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_scores, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_partition, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_prop1, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_prop2, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
