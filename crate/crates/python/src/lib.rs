//! Python bindings. Tensors cross the boundary as flat row-major lists plus a shape.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use opgraph_core::calibration::{CalibConfig, CalibMethod};
use opgraph_core::graph::{compile, parse_spec, GraphOperator};
use opgraph_core::protocol::{bootstrap_ci as core_bootstrap, run_scenarios, ScenarioOptions, Statistic};
use opgraph_core::registry::{basis_growth as core_growth, Registry};
use opgraph_core::runbundle::verify_runbundle;
use opgraph_core::templates::{template, TemplateOptions};
use opgraph_core::triad::{diagnose as core_diagnose, DiagnoseOptions};
use opgraph_core::{metrics, Dtype, Error, Tensor};

fn py_err(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.code());
    if e.is_numerical() {
        PyRuntimeError::new_err(msg)
    } else {
        PyValueError::new_err(msg)
    }
}

fn real_tensor(shape: &[usize], data: Vec<f64>) -> PyResult<Tensor> {
    Tensor::real(shape.to_vec(), data).map_err(py_err)
}

/// Returns floats for real tensors and complex numbers otherwise.
fn to_py(py: Python<'_>, t: &Tensor) -> PyResult<Py<PyAny>> {
    if t.is_complex() {
        Ok(t.to_complex_vec().into_pyobject(py)?.into_any().unbind())
    } else {
        Ok(t.as_real().unwrap_or_default().to_vec().into_pyobject(py)?.into_any().unbind())
    }
}

fn from_py(shape: &[usize], dtype: Dtype, obj: &Bound<'_, PyAny>) -> PyResult<Tensor> {
    match dtype {
        Dtype::Real64 => real_tensor(shape, obj.extract::<Vec<f64>>()?),
        Dtype::Complex128 => Tensor::complex(shape.to_vec(), obj.extract::<Vec<Complex64>>()?).map_err(py_err),
    }
}

/// A compiled operator graph.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: GraphOperator,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn from_yaml(text: &str) -> PyResult<Self> {
        let spec = parse_spec(text).map_err(py_err)?;
        Ok(PyGraph { inner: compile(&spec).map_err(py_err)? })
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        self.inner.output_shape().to_vec()
    }

    #[getter]
    fn all_linear(&self) -> bool {
        self.inner.all_linear()
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash().to_string()
    }

    fn plan(&self) -> Vec<String> {
        self.inner.plan_forward().into_iter().map(str::to_string).collect()
    }

    fn forward(&self, py: Python<'_>, x: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let t = from_py(self.inner.input_shape(), self.inner.input_dtype(), x)?;
        to_py(py, &self.inner.forward(&t).map_err(py_err)?)
    }

    fn adjoint(&self, py: Python<'_>, y: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let t = from_py(self.inner.output_shape(), self.inner.output_dtype(), y)?;
        to_py(py, &self.inner.adjoint(&t).map_err(py_err)?)
    }

    /// Returns `(passed, delta_max)`.
    #[pyo3(signature = (trials=5, seed=0))]
    fn adjoint_check(&self, trials: usize, seed: u64) -> PyResult<(bool, f64)> {
        let r = self.inner.adjoint_check(trials, seed).map_err(py_err)?;
        Ok((r.passed, r.delta_max))
    }

    fn __repr__(&self) -> String {
        format!("Graph({}, {:?} -> {:?})", self.inner.plan_forward().join("->"), self.inner.input_shape(), self.inner.output_shape())
    }
}

/// YAML graph spec of a shipped template, optionally at a mismatch θ.
#[pyfunction]
#[pyo3(signature = (modality, size=16, theta=None, fidelity=1))]
fn template_spec(modality: &str, size: usize, theta: Option<Vec<f64>>, fidelity: u8) -> PyResult<String> {
    let t = template(modality, &TemplateOptions { size, fidelity, sampling_ratio: None }).map_err(py_err)?;
    let spec = match theta {
        Some(th) => t.spec_at(&th).map_err(py_err)?,
        None => t.nominal.clone(),
    };
    spec.to_yaml().map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x_hat, x, shape, peak=1.0))]
fn psnr(x_hat: Vec<f64>, x: Vec<f64>, shape: Vec<usize>, peak: f64) -> PyResult<f64> {
    metrics::psnr(&real_tensor(&shape, x_hat)?, &real_tensor(&shape, x)?, peak).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x_hat, x, shape, peak=1.0))]
fn ssim(x_hat: Vec<f64>, x: Vec<f64>, shape: Vec<usize>, peak: f64) -> PyResult<f64> {
    metrics::ssim(&real_tensor(&shape, x_hat)?, &real_tensor(&shape, x)?, peak).map_err(py_err)
}

/// Percentile bootstrap interval of the mean.
#[pyfunction]
#[pyo3(signature = (values, b=1000, seed=0))]
fn bootstrap_ci(values: Vec<f64>, b: usize, seed: u64) -> PyResult<(f64, f64)> {
    core_bootstrap(&values, b, seed, Statistic::Mean).map_err(py_err)
}

/// `(N, K)` pairs over the given modality order (all shipped entries by default).
#[pyfunction]
#[pyo3(signature = (order=None))]
fn basis_growth(order: Option<Vec<String>>) -> PyResult<Vec<(usize, usize)>> {
    let reg = Registry::builtin();
    let order = order.unwrap_or_else(|| reg.modalities().into_iter().map(str::to_string).collect());
    let refs: Vec<&str> = order.iter().map(String::as_str).collect();
    Ok(core_growth(reg, &refs).map_err(py_err)?.into_iter().map(|p| (p.n, p.k)).collect())
}

/// Four-scenario run; returns the ScenarioResult as JSON text.
#[pyfunction]
#[pyo3(signature = (modality, theta_true, size=16, seed=0, calib="alg1", phantoms=3))]
fn run_scenario(
    py: Python<'_>,
    modality: &str,
    theta_true: Vec<f64>,
    size: usize,
    seed: u64,
    calib: &str,
    phantoms: usize,
) -> PyResult<String> {
    let t = template(modality, &TemplateOptions::new(size)).map_err(py_err)?;
    let opts = if calib == "none" {
        ScenarioOptions::fixed(t.family.theta_nom.clone())
    } else {
        let m: CalibMethod = calib.parse().map_err(py_err)?;
        ScenarioOptions::calibrated(m, CalibConfig { seed, ..CalibConfig::default() })
    };
    let solver = t.default_solver();
    let r = py.detach(|| {
        let ph = t.phantoms(phantoms, seed)?;
        run_scenarios(&t, &theta_true, &solver, &ph, seed, &opts)
    });
    serde_json::to_string(&r.map_err(py_err)?).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Gate diagnosis; returns the TriadReport as JSON text.
#[pyfunction]
#[pyo3(signature = (modality, theta_true, size=16, seed=0, phantoms=3, sampling_ratio=None))]
fn diagnose(
    py: Python<'_>,
    modality: &str,
    theta_true: Vec<f64>,
    size: usize,
    seed: u64,
    phantoms: usize,
    sampling_ratio: Option<f64>,
) -> PyResult<String> {
    let t = template(modality, &TemplateOptions { size, fidelity: 1, sampling_ratio }).map_err(py_err)?;
    let solver = t.default_solver();
    let r = py.detach(|| {
        let ph = t.phantoms(phantoms, seed)?;
        core_diagnose(&t, &theta_true, &solver, &ph, seed, &DiagnoseOptions::default())
    });
    serde_json::to_string(&r.map_err(py_err)?).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// True when every hash in the run directory's manifest still matches.
#[pyfunction]
fn verify_run(run_dir: &str) -> PyResult<bool> {
    Ok(verify_runbundle(std::path::Path::new(run_dir)).map_err(py_err)?.passed)
}

#[pymodule]
fn opgraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(template_spec, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(basis_growth, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(verify_run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
