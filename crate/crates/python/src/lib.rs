use msra::defaultfund::{default_fund_report, DefaultFundConfig};
use msra::estimators::MonteCarloEstimator;
use msra::loss::LossSpec;
use msra::scenario::{self, GaussianModel};
use msra::sensitivity;
use msra::solver::{self, Method, SolverOptions};
use msra::MsraError;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use std::sync::Arc;

fn to_py(e: MsraError) -> PyErr {
    match e.exit_code() {
        3 => PyOSError::new_err(e.to_string()),
        2 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON so results arrive as plain dicts and lists.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_loss(loss: &str) -> PyResult<LossSpec> {
    serde_json::from_str(loss).map_err(|e| PyValueError::new_err(format!("invalid loss spec: {e}")))
}

fn parse_method(method: &str) -> PyResult<Method> {
    match method {
        "kkt" => Ok(Method::Kkt),
        "sqp" => Ok(Method::Sqp),
        other => Err(PyValueError::new_err(format!("method must be \"kkt\" or \"sqp\", got {other:?}"))),
    }
}

/// Immutable `n × d` matrix of simulated losses.
#[pyclass(name = "ScenarioSet", module = "msra_py", frozen)]
struct PyScenarioSet {
    inner: Arc<scenario::ScenarioSet>,
}

#[pymethods]
impl PyScenarioSet {
    #[new]
    #[pyo3(signature = (rows, seed = 0))]
    fn new(rows: Vec<Vec<f64>>, seed: u64) -> PyResult<Self> {
        let inner = scenario::ScenarioSet::from_rows(&rows, seed, "python").map_err(to_py)?;
        Ok(PyScenarioSet { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = scenario::ScenarioSet::read_binary(path).map_err(to_py)?;
        Ok(PyScenarioSet { inner: Arc::new(inner) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write_binary(path).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|s| self.inner.row(s).to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("ScenarioSet(n={}, d={}, model_tag={:?})", self.inner.n(), self.inner.d(), self.inner.model_tag())
    }
}

#[pyfunction]
fn simulate_gaussian(py: Python<'_>, mean: Vec<f64>, covariance: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<PyScenarioSet> {
    let model = GaussianModel::from_rows(&mean, &covariance).map_err(to_py)?;
    let inner = py.detach(|| scenario::simulate_gaussian(&model, n, seed)).map_err(to_py)?;
    Ok(PyScenarioSet { inner: Arc::new(inner) })
}

/// Optimal allocation as a dict; `loss` is the JSON loss spec.
#[pyfunction]
#[pyo3(signature = (scenarios, loss, tol = None, method = "kkt"))]
fn allocate(py: Python<'_>, scenarios: &PyScenarioSet, loss: &str, tol: Option<f64>, method: &str) -> PyResult<Py<PyAny>> {
    let est = MonteCarloEstimator::new(scenarios.inner.clone(), parse_loss(loss)?).map_err(to_py)?;
    let opts = SolverOptions { tol, method: parse_method(method)?, ..Default::default() };
    let result = py.detach(|| solver::solve_allocation(&est, &opts)).map_err(to_py)?;
    to_object(py, &result)
}

/// Marginal risk and allocation along the shock `y`, aligned row by row
/// with `scenarios`.
#[pyfunction]
fn shock_sensitivity(py: Python<'_>, scenarios: &PyScenarioSet, loss: &str, y: &PyScenarioSet) -> PyResult<Py<PyAny>> {
    let est = MonteCarloEstimator::new(scenarios.inner.clone(), parse_loss(loss)?).map_err(to_py)?;
    let result = py
        .detach(|| {
            let alloc = solver::solve_allocation(&est, &SolverOptions::default())?;
            sensitivity::shock_sensitivity(&est, &alloc, &y.inner)
        })
        .map_err(to_py)?;
    to_object(py, &result)
}

#[pyfunction]
fn src_closed_form(rho: f64, sigma1: f64, sigma2: f64, alpha: f64) -> f64 {
    sensitivity::src_closed_form(rho, sigma1, sigma2, alpha)
}

#[pyfunction]
#[pyo3(signature = (scenarios, members, im_level = 0.99, df_total = None))]
fn default_fund(
    py: Python<'_>,
    scenarios: &PyScenarioSet,
    members: Vec<String>,
    im_level: f64,
    df_total: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let config = DefaultFundConfig { im_level, df_total };
    let report = py
        .detach(|| default_fund_report(&scenarios.inner, &members, &config, &SolverOptions::default()))
        .map_err(to_py)?;
    to_object(py, &report)
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| msra::cli::main_with_args(std::iter::once("msra".to_string()).chain(args)))
}

#[pymodule]
fn msra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioSet>()?;
    m.add_function(wrap_pyfunction!(simulate_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(shock_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(src_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(default_fund, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
