//! Python bindings: schemas, record matrices, training, generation and evaluation.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use rlsyn_core::cli::{cmd_benchmark, BenchmarkArgs};
use rlsyn_core::datastore::{self, FeatureSchema, RecordMatrix};
use rlsyn_core::diffcore::Tensor2;
use rlsyn_core::evalsuite::{self, EvalOptions};
use rlsyn_core::trainer::{self, Checkpoint, LossBreakdown, PPOConfig};
use rlsyn_core::Error;

create_exception!(rlsyn, RlsynError, PyException);

fn to_py(e: Error) -> PyErr {
    RlsynError::new_err(e.to_string())
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Ordered column specification with optional normalization stats.
#[pyclass(name = "Schema", module = "rlsyn", from_py_object)]
#[derive(Clone)]
pub struct PySchema {
    inner: FeatureSchema,
}

#[pymethods]
impl PySchema {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        FeatureSchema::from_json_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        FeatureSchema::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Schema of the built-in benchmark dataset.
    #[staticmethod]
    fn benchmark() -> Self {
        Self {
            inner: datastore::benchmark_schema(),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn has_stats(&self) -> bool {
        self.inner.has_stats()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("Schema({})", self.inner.names().join(", "))
    }
}

/// Row-major records under a schema, either raw or normalized.
#[pyclass(name = "Records", module = "rlsyn", from_py_object)]
#[derive(Clone)]
pub struct PyRecords {
    inner: RecordMatrix,
}

#[pymethods]
impl PyRecords {
    #[new]
    #[pyo3(signature = (schema, rows, normalized = false))]
    fn new(schema: &PySchema, rows: Vec<Vec<f64>>, normalized: bool) -> PyResult<Self> {
        let values = if rows.is_empty() {
            Tensor2::zeros(0, schema.inner.width())
        } else {
            Tensor2::from_rows(&rows).map_err(to_py)?
        };
        RecordMatrix::new(schema.inner.clone(), values, normalized)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read_csv(path: PathBuf, schema: &PySchema) -> PyResult<Self> {
        datastore::load_csv_with_schema(path, &schema.inner)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.inner.normalized
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema {
            inner: self.inner.schema.clone(),
        }
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.values.to_rows()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let c = self
            .inner
            .schema
            .names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| RlsynError::new_err(format!("no column `{name}`")))?;
        Ok(self.inner.column(c))
    }

    fn __len__(&self) -> usize {
        self.inner.rows()
    }

    fn __repr__(&self) -> String {
        let kind = if self.inner.normalized { "normalized" } else { "raw" };
        format!("Records({} x {}, {kind})", self.inner.rows(), self.inner.width())
    }
}

/// Training configuration.
#[pyclass(name = "Config", module = "rlsyn", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: PPOConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn profile(name: &str) -> PyResult<Self> {
        PPOConfig::profile(name).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Parses TOML; a `profile` key selects the base that other keys override.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        PPOConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn profiles() -> Vec<&'static str> {
        trainer::PROFILES.to_vec()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Trained generator with its training history.
#[pyclass(name = "Model", module = "rlsyn")]
pub struct PyModel {
    checkpoint: Checkpoint,
    history: Vec<LossBreakdown>,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint file; the loss history is not stored there and starts empty.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            checkpoint: Checkpoint::load(path).map_err(to_py)?,
            history: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(path).map_err(to_py)
    }

    /// Draws `n` normalized records.
    #[pyo3(signature = (n, seed = 0))]
    fn generate(&self, n: usize, seed: u64) -> PyResult<PyRecords> {
        trainer::generate(&self.checkpoint.generator, &self.checkpoint.schema, n, seed)
            .map(|inner| PyRecords { inner })
            .map_err(to_py)
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.checkpoint.iteration
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema {
            inner: self.checkpoint.schema.clone(),
        }
    }

    /// Per-iteration loss components as a list of dicts.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.history)
    }
}

/// Min-max stats fitted on `records`.
#[pyfunction]
fn fit_normalizer(records: &PyRecords) -> PyResult<PySchema> {
    datastore::fit_normalizer(&records.inner)
        .map(|inner| PySchema { inner })
        .map_err(to_py)
}

#[pyfunction]
fn normalize(records: &PyRecords, schema: &PySchema) -> PyResult<PyRecords> {
    datastore::normalize(&records.inner, &schema.inner)
        .map(|inner| PyRecords { inner })
        .map_err(to_py)
}

#[pyfunction]
fn denormalize(records: &PyRecords, schema: &PySchema) -> PyResult<PyRecords> {
    datastore::denormalize(&records.inner, &schema.inner)
        .map(|inner| PyRecords { inner })
        .map_err(to_py)
}

/// Raw benchmark records and their schema.
#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn make_benchmark(n: usize, seed: u64) -> PyResult<(PyRecords, PySchema)> {
    let (m, s) = datastore::make_benchmark_dataset(n, seed).map_err(to_py)?;
    Ok((PyRecords { inner: m }, PySchema { inner: s }))
}

/// Train/test split; returns `(train, test)`.
#[pyfunction]
#[pyo3(signature = (records, fraction, seed = 0))]
fn split(records: &PyRecords, fraction: f64, seed: u64) -> PyResult<(PyRecords, PyRecords)> {
    let p = datastore::split(&records.inner, fraction, seed).map_err(to_py)?;
    Ok((PyRecords { inner: p.train }, PyRecords { inner: p.test }))
}

/// Trains on normalized records. Releases the interpreter lock while running.
#[pyfunction]
fn train(py: Python<'_>, records: &PyRecords, config: &PyConfig) -> PyResult<PyModel> {
    let real = records.inner.clone();
    let cfg = config.inner.clone();
    let state = py
        .detach(move || trainer::train(&real, &cfg).map(|s| (s, real, cfg)))
        .map_err(to_py)?;
    let (state, real, cfg) = state;
    let checkpoint = Checkpoint::capture(&state, &real.schema, &cfg, real.rows());
    Ok(PyModel {
        checkpoint,
        history: state.history,
    })
}

/// Full privacy, utility and fidelity report for four normalized matrices, as a dict.
#[pyfunction]
#[pyo3(signature = (real_train, real_test, syn_train, syn_test, seed = 0, mia_cap = None))]
fn evaluate<'py>(
    py: Python<'py>,
    real_train: &PyRecords,
    real_test: &PyRecords,
    syn_train: &PyRecords,
    syn_test: &PyRecords,
    seed: u64,
    mia_cap: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = EvalOptions {
        seed,
        mia_cap,
        ..EvalOptions::default()
    };
    let report = evalsuite::evaluate(
        &real_train.inner,
        &real_test.inner,
        &syn_train.inner,
        &syn_test.inner,
        &opts,
    )
    .map_err(to_py)?;
    json_to_py(py, &report)
}

/// Exact one-dimensional Wasserstein-1 distance between two samples.
#[pyfunction]
fn wasserstein_1d(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    evalsuite::wasserstein_1d(&a, &b).map_err(to_py)
}

/// Probability that a random positive scores above a random negative (ties count half).
#[pyfunction]
fn rank_auc(positives: Vec<f64>, negatives: Vec<f64>) -> PyResult<f64> {
    evalsuite::rank_auc(&positives, &negatives).map_err(to_py)
}

/// Normalized mutual information between two labelings.
#[pyfunction]
fn nmi(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    evalsuite::nmi(&a, &b).map_err(to_py)
}

/// End-to-end benchmark into `out`; returns the verdict as a dict.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, iterations = None))]
fn run_benchmark<'py>(
    py: Python<'py>,
    out: PathBuf,
    seed: u64,
    iterations: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let args = BenchmarkArgs {
        seed,
        out,
        config: None,
        iterations,
    };
    let verdict = py.detach(move || cmd_benchmark(&args)).map_err(to_py)?;
    json_to_py(py, &verdict)
}

#[pymodule]
pub fn rlsyn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RlsynError", m.py().get_type::<RlsynError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyRecords>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_normalizer, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(make_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_1d, m)?)?;
    m.add_function(wrap_pyfunction!(rank_auc, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
