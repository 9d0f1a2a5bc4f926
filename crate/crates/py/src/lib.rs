//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fedqhd::agent::{Agent, AgentConfig, ReadoutMatrix};
use fedqhd::encoder::RffEncoder;
use fedqhd::envs::{Env, EnvKind};
use fedqhd::federation::{
    compile_ridge_dual, compile_ridge_primal, federate_homogeneous, uniform_weights, ClientAnchors,
};
use fedqhd::harness::{self, HarnessError, RunConfig, SweepKind};
use fedqhd::linalg::Matrix;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(_) => PyValueError::new_err(e.to_string()),
        HarnessError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Matrix::from_vec(r, c, rows.concat()).map_err(value_err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Random Fourier feature encoder.
#[pyclass(name = "Encoder", frozen)]
struct PyEncoder {
    inner: Arc<RffEncoder>,
}

#[pymethods]
impl PyEncoder {
    #[new]
    fn new(seed: u64, dim: usize, state_dim: usize, sigma: f64) -> PyResult<Self> {
        let inner = RffEncoder::new(seed, dim, state_dim, sigma).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn encode(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.encode(&state).map_err(value_err)
    }

    fn encode_batch(&self, states: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.encode_batch(&states).map_err(value_err)?))
    }
}

/// A gym-style environment: `reset()` then `step(action)`.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    inner: Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let kind: EnvKind = name.parse().map_err(value_err)?;
        Ok(Self {
            inner: Env::new(kind, seed),
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.spec().name
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.inner.spec().action_count
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    /// Returns `(observation, reward, terminated, truncated)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let t = self.inner.step(action).map_err(value_err)?;
        let terminal = t.is_terminal();
        Ok((t.s_next, t.r, terminal, t.truncated))
    }
}

/// Linear Q-learning agent over an encoder.
#[pyclass(name = "Agent", unsendable)]
struct PyAgent {
    inner: Agent,
}

#[pymethods]
impl PyAgent {
    /// `config` is an optional JSON object of agent hyperparameters.
    #[new]
    #[pyo3(signature = (encoder, action_count, seed, config=None))]
    fn new(encoder: &PyEncoder, action_count: usize, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let config: AgentConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => AgentConfig::default(),
        };
        let inner = Agent::new(encoder.inner.clone(), action_count, config, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn q_values(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.q_values(&state).map_err(value_err)
    }

    fn run_episode(&mut self, env: &mut PyEnv) -> PyResult<f64> {
        self.inner.run_episode(&mut env.inner).map_err(value_err)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn episodes_done(&self) -> usize {
        self.inner.episodes_done()
    }

    /// Readout as `D` rows of `|A|` values.
    fn weights(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.weights().to_matrix())
    }

    fn set_weights(&mut self, rows: Vec<Vec<f64>>) -> PyResult<()> {
        let w = ReadoutMatrix::from_matrix(&to_matrix(rows)?);
        self.inner.install_global(w).map_err(value_err)
    }
}

/// Weighted average of readouts that share an encoder; uniform by default.
#[pyfunction]
#[pyo3(signature = (readouts, weights=None))]
fn average_readouts(readouts: Vec<Vec<Vec<f64>>>, weights: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let ws = readouts
        .into_iter()
        .map(|r| to_matrix(r).map(|m| ReadoutMatrix::from_matrix(&m)))
        .collect::<PyResult<Vec<_>>>()?;
    let weights = weights.unwrap_or_else(|| uniform_weights(ws.len()));
    let avg = federate_homogeneous(&ws, &weights).map_err(value_err)?;
    Ok(to_rows(&avg.to_matrix()))
}

/// Ridge fit of anchor targets (`m × |A|`) onto anchor features (`m × D`).
#[pyfunction]
#[pyo3(signature = (features, targets, lam, solver="auto"))]
fn compile_ridge(features: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, lam: f64, solver: &str) -> PyResult<Vec<Vec<f64>>> {
    let x = to_matrix(features)?;
    let (m, dim) = x.shape();
    let cache = ClientAnchors::from_features(0, x);
    let q = to_matrix(targets)?;
    let dual = match solver {
        "primal" => false,
        "dual" => true,
        "auto" => m < dim,
        other => return Err(PyValueError::new_err(format!("unknown solver {other:?}"))),
    };
    let w = if dual {
        compile_ridge_dual(&cache, &q, lam)
    } else {
        compile_ridge_primal(&cache, &q, lam)
    }
    .map_err(value_err)?;
    Ok(to_rows(&w.to_matrix()))
}

/// Runs an experiment from a JSON config; returns the overall final-100 mean.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: Option<PathBuf>) -> PyResult<f64> {
    let config = RunConfig::from_json(config_json).map_err(harness_err)?;
    let dir = out_dir.unwrap_or_else(|| config.output_dir.clone());
    let summary = py
        .detach(|| harness::run_experiment(&config, &dir))
        .map_err(harness_err)?;
    Ok(summary.overall)
}

/// Runs a sweep (`dimension`, `anchor` or `scalability`); returns the CSV path.
#[pyfunction]
#[pyo3(signature = (kind, config_json, out_dir=None))]
fn run_sweep(py: Python<'_>, kind: &str, config_json: &str, out_dir: Option<PathBuf>) -> PyResult<PathBuf> {
    let kind: SweepKind = kind.parse().map_err(harness_err)?;
    let config = RunConfig::from_json(config_json).map_err(harness_err)?;
    let dir = out_dir.unwrap_or_else(|| config.output_dir.clone());
    let output = py
        .detach(|| harness::run_sweep(kind, &config, &dir))
        .map_err(harness_err)?;
    Ok(output.path)
}

/// JSON of the default run config with every field present.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("config serialises")
}

#[pymodule]
fn fedqhd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(average_readouts, m)?)?;
    m.add_function(wrap_pyfunction!(compile_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("SUMMARY_HEADER", harness::SUMMARY_HEADER)?;
    m.add("SWEEP_HEADER", harness::SWEEP_HEADER)?;
    Ok(())
}
