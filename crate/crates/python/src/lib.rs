//! Python bindings: training, posterior NLL prediction, calibration,
//! uncertainty, rejection curves and full sweeps.

use std::path::PathBuf;

use bae_core::calibration::{
    anomaly_probability_matrix, hard_predict, mean_anomaly_probability, Calibration,
    CalibrationConfig, QKind,
};
use bae_core::evaluation::{self, ArcReport, ConfusionCounts};
use bae_core::experiment::{report_summary, run_experiment, write_outputs, ExperimentConfig};
use bae_core::models::{self, AutoencoderArchitecture, Method, ModelOptions, PosteriorEnsemble, TrainingConfig};
use bae_core::uncertainty::UncertaintyReport;
use bae_core::{BaeError, RealMatrix};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: BaeError) -> PyErr {
    match e {
        BaeError::Io(_) => PyIOError::new_err(e.to_string()),
        BaeError::Diverged { .. } | BaeError::State(_) | BaeError::Consistency(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

pub fn matrix(rows: &[Vec<f64>]) -> PyResult<RealMatrix> {
    RealMatrix::from_rows(rows).map_err(to_py)
}

fn parse_method(name: &str) -> PyResult<Method> {
    Method::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown model {name:?}")))
}

fn parse_q(name: &str) -> PyResult<QKind> {
    QKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown Q distribution {name:?}")))
}

#[pyclass(name = "Architecture", from_py_object)]
#[derive(Clone)]
struct PyArchitecture {
    inner: AutoencoderArchitecture,
}

#[pymethods]
impl PyArchitecture {
    #[new]
    #[pyo3(signature = (input_dim, hidden, latent_dim, skip_connections=false))]
    fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize, skip_connections: bool) -> PyResult<Self> {
        let inner = AutoencoderArchitecture::new(input_dim, hidden, latent_dim).with_skip_connections(skip_connections);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    fn __repr__(&self) -> String {
        format!("Architecture({:?})", self.inner.widths())
    }
}

/// A trained posterior: M networks, or one stochastic network sampled M times.
#[pyclass(name = "Model")]
struct PyModel {
    inner: PosteriorEnsemble,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (
        method, data, architecture, epochs=100, learning_rate=1e-3, weight_decay=1e-10,
        samples=None, batch_size=Some(16), seed=0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        method: &str,
        data: Vec<Vec<f64>>,
        architecture: &PyArchitecture,
        epochs: usize,
        learning_rate: f64,
        weight_decay: f64,
        samples: Option<usize>,
        batch_size: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let method = parse_method(method)?;
        let x = matrix(&data)?;
        let cfg = TrainingConfig {
            epochs,
            learning_rate,
            weight_decay,
            samples,
            batch_size,
            seed,
        };
        let arch = architecture.inner.clone();
        let inner = py
            .detach(|| models::train(method, &x, &arch, &cfg, &ModelOptions::default()))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_snapshot(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::save_snapshot(&self.inner, path).map_err(to_py)
    }

    /// NLL scores, one row per posterior sample.
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x)?;
        let scores = py.detach(|| self.inner.predict(&x)).map_err(to_py)?;
        Ok(scores.to_rows())
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples
    }

    #[getter]
    fn loss_history(&self) -> Vec<Vec<f64>> {
        self.inner.loss_history.clone()
    }

    fn __repr__(&self) -> String {
        format!("Model(method={:?}, samples={})", self.inner.method.name(), self.inner.samples)
    }
}

#[pyfunction]
fn nll(x: Vec<f64>, x_hat: Vec<f64>) -> PyResult<f64> {
    models::nll(&x, &x_hat).map_err(to_py)
}

/// `(features, labels)` of the two-blob synthetic dataset.
#[pyfunction]
#[pyo3(signature = (seed, n_inliers=500, n_anomalies=100))]
fn make_synthetic_2d(seed: u64, n_inliers: usize, n_anomalies: usize) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let t = bae_core::data::make_synthetic_2d(seed, n_inliers, n_anomalies).map_err(to_py)?;
    Ok((t.features.to_rows(), t.labels))
}

/// M x N anomaly probabilities from training and test NLL score matrices.
#[pyfunction]
#[pyo3(signature = (train_scores, test_scores, q="ecdf", scaled=false))]
fn anomaly_probabilities(
    train_scores: Vec<Vec<f64>>,
    test_scores: Vec<Vec<f64>>,
    q: &str,
    scaled: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let config = CalibrationConfig { kind: parse_q(q)?, scaled };
    let calibration = Calibration::fit(&matrix(&train_scores)?, config).map_err(to_py)?;
    Ok(anomaly_probability_matrix(&matrix(&test_scores)?, &calibration)
        .map_err(to_py)?
        .to_rows())
}

#[pyfunction]
fn mean_probability(probabilities: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(mean_anomaly_probability(&matrix(&probabilities)?))
}

#[pyfunction]
#[pyo3(signature = (p_bar, threshold=0.5))]
fn predict_labels(p_bar: Vec<f64>, threshold: f64) -> Vec<u8> {
    hard_predict(&p_bar, threshold)
}

/// Per-point uncertainties as a dict of lists.
#[pyfunction]
fn uncertainty<'py>(
    py: Python<'py>,
    probabilities: Vec<Vec<f64>>,
    test_scores: Vec<Vec<f64>>,
    train_scores: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = UncertaintyReport::compute(&matrix(&probabilities)?, &matrix(&test_scores)?, &matrix(&train_scores)?)
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("epistemic", r.epistemic)?;
    d.set_item("aleatoric", r.aleatoric)?;
    d.set_item("total_raw", r.total_raw)?;
    d.set_item("total", r.total_scaled)?;
    d.set_item("exceed", r.exceed)?;
    d.set_item("var_nll", r.var_nll)?;
    Ok(d)
}

fn arc_dict<'py>(py: Python<'py>, report: &ArcReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r", report.points.iter().map(|p| p.rejection_rate).collect::<Vec<_>>())?;
    d.set_item("retained", report.points.iter().map(|p| p.retained).collect::<Vec<_>>())?;
    d.set_item("gss", report.points.iter().map(|p| p.gss).collect::<Vec<_>>())?;
    d.set_item("auroc", report.points.iter().map(|p| p.auroc).collect::<Vec<_>>())?;
    d.set_item("w_gss", report.gss.map(|s| s.w))?;
    d.set_item("base_gss", report.gss.map(|s| s.base))?;
    d.set_item("gain_gss", report.gss.map(|s| s.gain))?;
    Ok(d)
}

/// Accuracy-rejection curve; `grid` defaults to 0, 5, …, 95.
#[pyfunction]
#[pyo3(signature = (uncertainty, labels, predictions, scores, grid=None))]
fn arc<'py>(
    py: Python<'py>,
    uncertainty: Vec<f64>,
    labels: Vec<u8>,
    predictions: Vec<u8>,
    scores: Vec<f64>,
    grid: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = grid.unwrap_or_else(evaluation::default_grid);
    let report = evaluation::arc(&uncertainty, &labels, &predictions, &scores, &grid).map_err(to_py)?;
    arc_dict(py, &report)
}

#[pyfunction]
fn gss(tp: usize, tn: usize, fp: usize, fn_: usize) -> Option<f64> {
    evaluation::gss(&ConfusionCounts { tp, tn, fp, fn_ })
}

#[pyfunction]
fn auroc(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<Option<f64>> {
    evaluation::auroc(&labels, &scores).map_err(to_py)
}

/// Runs a sweep from a JSON config string; returns the summary as JSON text.
/// Reports are written under `out` when given.
#[pyfunction]
#[pyo3(signature = (config_json, workers=1, out=None))]
fn run_sweep(py: Python<'_>, config_json: &str, workers: usize, out: Option<PathBuf>) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let summary = py
        .detach(|| -> bae_core::Result<_> {
            let results = run_experiment(&config, workers)?;
            match out {
                Some(dir) => write_outputs(&results, dir),
                None => Ok(report_summary(&results)),
            }
        })
        .map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn bae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(nll, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic_2d, m)?)?;
    m.add_function(wrap_pyfunction!(anomaly_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(mean_probability, m)?)?;
    m.add_function(wrap_pyfunction!(predict_labels, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(arc, m)?)?;
    m.add_function(wrap_pyfunction!(gss, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add("MODELS", Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>())?;
    Ok(())
}
