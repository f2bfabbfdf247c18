//! Python bindings: embedding matrices, collapse metrics, the toy experiment,
//! config-driven training and checkpoint analysis.

use std::path::Path;

use collapse_lab::analysis::{collapse_report, AnalysisInput, AnalysisOptions};
use collapse_lab::cli::{report_document, strip_wall_clock};
use collapse_lab::data::{self, Dataset, FieldSchema};
use collapse_lab::engine::read_checkpoint;
use collapse_lab::experiment::{parse_config, run_experiment};
use collapse_lab::linalg;
use collapse_lab::metrics::{self, NormalizeMode};
use collapse_lab::{train, Error, Matrix};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Bad arguments raise `ValueError`, file problems `OSError`, and failures
/// during computation `RuntimeError`.
fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Shape { .. }
        | Error::Contract(_)
        | Error::Degenerate(_)
        | Error::InsufficientData(_)
        | Error::Metric(_) => PyValueError::new_err(e.to_string()),
        _ if e.is_input_error() => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (value.to_string(),))?.unbind())
}

/// Dense row-major `f64` matrix.
#[pyclass(name = "Matrix", module = "collapse_lab_py", from_py_object)]
#[derive(Clone)]
pub struct PyMatrix {
    inner: Matrix,
}

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: Matrix::from_rows(&rows).map_err(py_err)?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }

    fn information_abundance(&self) -> PyResult<f64> {
        metrics::information_abundance(&self.inner).map_err(py_err)
    }

    /// `(u, sigma, v)` with `self = u diag(sigma) v^T`.
    fn svd(&self) -> PyResult<(PyMatrix, Vec<f64>, PyMatrix)> {
        let s = linalg::svd(&self.inner).map_err(py_err)?;
        Ok((PyMatrix { inner: s.u }, s.sigma, PyMatrix { inner: s.v }))
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{})", self.inner.rows(), self.inner.cols())
    }
}

#[pyfunction]
fn information_abundance(e: PyRef<'_, PyMatrix>) -> PyResult<f64> {
    metrics::information_abundance(&e.inner).map_err(py_err)
}

/// `mode` is `"per_size"` or `"per_random"`.
#[pyfunction]
#[pyo3(signature = (e, mode = "per_size", samples = 8, seed = 0))]
fn normalized_ia(e: PyRef<'_, PyMatrix>, mode: &str, samples: usize, seed: u64) -> PyResult<f64> {
    let mode = match mode {
        "per_size" => NormalizeMode::PerSize,
        "per_random" => NormalizeMode::PerRandom { samples, seed },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown normalization {other:?}"
            )))
        }
    };
    metrics::normalized_ia(&e.inner, mode).map_err(py_err)
}

#[pyfunction]
fn diversity(a: PyRef<'_, PyMatrix>, b: PyRef<'_, PyMatrix>) -> PyResult<f64> {
    metrics::diversity(&a.inner, &b.inner).map_err(py_err)
}

/// Cosines of the principal angles between the left singular bases of two
/// matrices, in descending order.
#[pyfunction]
fn principal_angle_cosines(a: PyRef<'_, PyMatrix>, b: PyRef<'_, PyMatrix>) -> PyResult<Vec<f64>> {
    let u1 = linalg::svd(&a.inner).map_err(py_err)?.u;
    let u2 = linalg::svd(&b.inner).map_err(py_err)?.u;
    linalg::principal_angle_cosines(&u1, &u2).map_err(py_err)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    train::auc(&scores, &labels).map_err(py_err)
}

fn dataset_dict<'py>(py: Python<'py>, ds: &Dataset) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("cardinalities", ds.schema.cardinalities())?;
    d.set_item(
        "indices",
        ds.rows
            .iter()
            .map(|r| r.indices.clone())
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "labels",
        ds.rows.iter().map(|r| r.label).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// The three-field toy dataset as `{"cardinalities", "indices", "labels"}`.
#[pyfunction]
fn gen_toy(py: Python<'_>, d3: usize, seed: u64) -> PyResult<Bound<'_, PyDict>> {
    let ds = data::gen_toy(d3, seed).map_err(py_err)?;
    dataset_dict(py, &ds)
}

/// `[(step, IA(E_1)), ...]` on the logarithmic checkpoint schedule.
#[pyfunction]
fn run_toy(py: Python<'_>, d3: usize, steps: usize, seed: u64) -> PyResult<Vec<(u64, f64)>> {
    let run = py
        .detach(|| train::run_toy(d3, steps, seed))
        .map_err(py_err)?;
    Ok(run.trajectory)
}

/// Trains from a JSON config string. Relative paths resolve against
/// `base_dir`. Returns `{"record", "report"}`; the record has no wall-clock
/// field so equal configs give equal results.
#[pyfunction]
#[pyo3(signature = (config_json, base_dir = "."))]
fn train_config(py: Python<'_>, config_json: &str, base_dir: &str) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config_json, "<config>").map_err(py_err)?;
    let out = py
        .detach(|| run_experiment(&cfg, Path::new(base_dir)))
        .map_err(py_err)?;
    let record =
        serde_json::to_value(&out.record).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let doc = serde_json::json!({
        "record": strip_wall_clock(record),
        "report": report_document(&out.report, &out.record.ia_trajectory).map_err(py_err)?,
    });
    to_py(py, &doc)
}

/// Collapse report for a checkpoint manifest and its schema JSON file.
#[pyfunction]
#[pyo3(signature = (manifest, schema, se_split_sets = 2, include_diagonal = true))]
fn analyze_checkpoint(
    py: Python<'_>,
    manifest: &str,
    schema: &str,
    se_split_sets: usize,
    include_diagonal: bool,
) -> PyResult<Py<PyAny>> {
    let text = std::fs::read_to_string(schema)
        .map_err(|e| PyValueError::new_err(format!("{schema}: {e}")))?;
    let schema: FieldSchema =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("{schema}: {e}")))?;
    let slots = read_checkpoint(manifest).map_err(py_err)?;
    let input = AnalysisInput::from_checkpoint(&slots, &schema, None).map_err(py_err)?;
    let opts = AnalysisOptions {
        include_diagonal,
        se_split_sets,
    };
    let report = collapse_report(&input, &opts).map_err(py_err)?;
    to_py(py, &report_document(&report, &[]).map_err(py_err)?)
}

#[pymodule]
pub fn collapse_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_function(wrap_pyfunction!(information_abundance, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_ia, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angle_cosines, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gen_toy, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_checkpoint, m)?)?;
    Ok(())
}
