//! Python bindings: scenario configs and evaluation, estimation reports,
//! sampled records, IDIM on a record, inverse dynamics and zero-phase filtering.

use std::path::PathBuf;

use didim::dynamics::{self, BaseParameters, JointState, SmoothSign};
use didim::error::Error;
use didim::estimators::{
    idim_identify as core_idim, DidimOutcome, EstimationReport, IdimOptions, IterationHistory, OeOutcome, Solver,
    Termination,
};
use didim::experiment::{self, ErrorRecord, MethodResult, ScenarioConfig, ScenarioOutcome};
use didim::signal::{self, DecimationSpec, FilterSpec};
use didim::sim::SimRecord;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(pydidim, DidimError, PyException, "Failure reported by the library; `args` is (kind, message).");

fn err(e: Error) -> PyErr {
    DidimError::new_err((e.kind().to_string(), e.to_string()))
}

fn record_err(e: &ErrorRecord) -> PyErr {
    DidimError::new_err((e.kind.clone(), e.message.clone()))
}

/// Serializes through JSON so nested data arrives as plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text =
        serde_json::to_string(v).map_err(|e| DidimError::new_err(("InvalidInput".to_string(), e.to_string())))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn status_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max_iterations",
        Termination::PoorFit => "poor_fit",
    }
}

/// Names of the eight base parameters, in estimation order.
#[pyfunction]
fn parameter_names() -> Vec<&'static str> {
    BaseParameters::NAMES.to_vec()
}

/// Ground-truth parameters of the synthetic robot.
#[pyfunction]
fn nominal_parameters() -> Vec<f64> {
    BaseParameters::NOMINAL.to_array().to_vec()
}

fn params(chi: Vec<f64>) -> PyResult<BaseParameters> {
    BaseParameters::from_slice(&chi).map_err(err)
}

/// Joint torques of the inverse dynamic model at one state.
#[pyfunction]
#[pyo3(signature = (q, qd, qdd, chi, epsilon = SmoothSign::DEFAULT_EPSILON))]
fn inverse_dynamics(q: [f64; 2], qd: [f64; 2], qdd: [f64; 2], chi: Vec<f64>, epsilon: f64) -> PyResult<[f64; 2]> {
    let ssign = SmoothSign::new(epsilon).map_err(err)?;
    Ok(dynamics::inverse_dynamics(&JointState::new(q, qd, qdd), &params(chi)?, &ssign))
}

/// Forward-backward Butterworth lowpass of one series sampled at `fm`.
#[pyfunction]
#[pyo3(signature = (series, fm, cutoff_hz, order = 4))]
fn zero_phase_lowpass(series: Vec<f64>, fm: f64, cutoff_hz: f64, order: usize) -> PyResult<Vec<f64>> {
    let spec = FilterSpec { order, ..FilterSpec::new(cutoff_hz) };
    signal::zero_phase_lowpass(&series, fm, &spec).map_err(err)
}

/// Least-squares estimate with its statistics.
#[pyclass(name = "EstimationReport", frozen)]
struct PyReport(EstimationReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn method(&self) -> String {
        self.0.method.clone()
    }
    #[getter]
    fn chi_hat(&self) -> Vec<f64> {
        self.0.chi_hat.to_array().to_vec()
    }
    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.0.sigma.to_vec()
    }
    /// Percent relative deviations; `None` where the estimate is zero.
    #[getter]
    fn rel_sigma_pct(&self) -> Vec<Option<f64>> {
        self.0.rel_sigma_pct.to_vec()
    }
    #[getter]
    fn sigma_rho(&self) -> f64 {
        self.0.sigma_rho
    }
    #[getter]
    fn rel_error(&self) -> f64 {
        self.0.rel_error
    }
    #[getter]
    fn condition_number(&self) -> f64 {
        self.0.condition_number
    }
    #[getter]
    fn rows(&self) -> usize {
        self.0.rows
    }
    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }
    fn __repr__(&self) -> String {
        format!("EstimationReport(method={:?}, rel_error={:.4e})", self.0.method, self.0.rel_error)
    }
}

/// Outcome of an iterative estimator (DIDIM or output error).
#[pyclass(name = "IterativeResult", frozen)]
struct PyIterative {
    report: EstimationReport,
    history: IterationHistory,
    status: Termination,
    iterations: usize,
}

impl From<&DidimOutcome> for PyIterative {
    fn from(o: &DidimOutcome) -> Self {
        Self { report: o.report.clone(), history: o.history.clone(), status: o.status, iterations: o.iterations }
    }
}

impl From<&OeOutcome> for PyIterative {
    fn from(o: &OeOutcome) -> Self {
        Self { report: o.report.clone(), history: o.history.clone(), status: o.status, iterations: o.iterations }
    }
}

#[pymethods]
impl PyIterative {
    #[getter]
    fn report(&self) -> PyReport {
        PyReport(self.report.clone())
    }
    /// One of `converged`, `max_iterations`, `poor_fit`.
    #[getter]
    fn status(&self) -> &'static str {
        status_name(self.status)
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.iterations
    }
    /// Per-iteration records as dicts.
    #[getter]
    fn history(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.history.iterations)
    }
    fn history_csv(&self) -> String {
        self.history.to_csv()
    }
}

/// Sampled run: time, positions, torques, control signal.
#[pyclass(name = "SimRecord", frozen)]
struct PyRecord(SimRecord);

#[pymethods]
impl PyRecord {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        SimRecord::read_csv(text.as_bytes()).map(Self).map_err(err)
    }
    #[getter]
    fn fm(&self) -> f64 {
        self.0.fm
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }
    #[getter]
    fn q(&self) -> Vec<[f64; 2]> {
        self.0.q.clone()
    }
    #[getter]
    fn qd(&self) -> Option<Vec<[f64; 2]>> {
        self.0.qd.clone()
    }
    #[getter]
    fn tau(&self) -> Vec<[f64; 2]> {
        self.0.tau.clone()
    }
    #[getter]
    fn v_tau(&self) -> Vec<[f64; 2]> {
        self.0.v_tau.clone()
    }
    fn to_csv(&self) -> PyResult<String> {
        self.0.to_csv_string().map_err(err)
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// IDIM least squares on a measured record. `cutoff_hz` / `nd` of `None`
/// skip filtering / decimation.
#[pyfunction]
#[pyo3(signature = (record, g_apriori = [1.0, 1.0], cutoff_hz = Some(20.0), nd = Some(20), solver = "wls"))]
fn idim_identify(
    record: &PyRecord,
    g_apriori: [f64; 2],
    cutoff_hz: Option<f64>,
    nd: Option<usize>,
    solver: &str,
) -> PyResult<PyReport> {
    let solver = match solver {
        "ols" => Solver::Ols,
        "wls" => Solver::Wls,
        other => return Err(err(Error::InvalidInput(format!("solver must be \"ols\" or \"wls\", got {other:?}")))),
    };
    let opts = IdimOptions {
        filter: cutoff_hz.map(FilterSpec::new),
        decimation: nd.map(DecimationSpec::new),
        solver,
        ..IdimOptions::default()
    };
    let chain = didim::control::DriveChain::matched(g_apriori).map_err(err)?;
    core_idim(&record.0, &chain, &opts).map(PyReport).map_err(err)
}

/// Declarative scenario (TOML).
#[pyclass(name = "ScenarioConfig")]
struct PyConfig(ScenarioConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (text, seed = None))]
    fn from_toml(text: &str, seed: Option<u64>) -> PyResult<Self> {
        ScenarioConfig::from_toml_str_with_seed(text, seed).map(Self).map_err(err)
    }
    #[staticmethod]
    #[pyo3(signature = (path, seed = None))]
    fn from_file(path: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        ScenarioConfig::from_file_with_seed(&path, seed).map(Self).map_err(err)
    }
    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml_string().map_err(err)
    }
    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }
    #[getter]
    fn seed(&self) -> Option<u64> {
        self.0.seed
    }
    #[setter]
    fn set_seed(&mut self, seed: Option<u64>) -> PyResult<()> {
        let mut next = self.0.clone();
        next.seed = seed;
        next.validate().map_err(err)?;
        self.0 = next;
        Ok(())
    }
}

/// Everything one scenario produced.
#[pyclass(name = "ScenarioOutcome", frozen)]
struct PyOutcome(ScenarioOutcome);

fn method<T, U>(r: &Option<MethodResult<T>>, wrap: impl Fn(&T) -> U) -> PyResult<Option<U>> {
    match r {
        None => Ok(None),
        Some(Ok(v)) => Ok(Some(wrap(v))),
        Some(Err(e)) => Err(record_err(e)),
    }
}

#[pymethods]
impl PyOutcome {
    /// IDIM report; `None` if not configured, raises if the estimator failed.
    #[getter]
    fn idim(&self) -> PyResult<Option<PyReport>> {
        method(&self.0.idim, |r| PyReport(r.clone()))
    }
    #[getter]
    fn didim(&self) -> PyResult<Option<PyIterative>> {
        method(&self.0.didim, |o| PyIterative::from(o))
    }
    #[getter]
    fn oe(&self) -> PyResult<Option<PyIterative>> {
        method(&self.0.oe, |o| PyIterative::from(o))
    }
    /// `(method, kind, message)` for every estimator that failed.
    #[getter]
    fn errors(&self) -> Vec<(String, String, String)> {
        self.0.errors().into_iter().map(|(m, e)| (m.to_string(), e.kind.clone(), e.message.clone())).collect()
    }
    #[getter]
    fn actual(&self) -> PyRecord {
        PyRecord(self.0.actual.clone())
    }
    #[getter]
    fn measured(&self) -> PyRecord {
        PyRecord(self.0.measured.clone())
    }
    #[getter]
    fn monte_carlo(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.monte_carlo)
    }
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &experiment::summarize(&self.0))
    }
    /// Writes the artifact bundle into `directory`; returns the file names.
    fn write_bundle(&self, directory: PathBuf) -> PyResult<Vec<String>> {
        let m = experiment::write_bundle(&self.0, &directory).map_err(err)?;
        Ok(m.files.into_iter().map(|f| f.path).collect())
    }
}

/// Runs the scenario's simulations and estimators without touching the disk.
#[pyfunction]
#[pyo3(signature = (config, workers = 1))]
fn evaluate_scenario(py: Python<'_>, config: &PyConfig, workers: usize) -> PyResult<PyOutcome> {
    let cfg = config.0.clone();
    py.detach(move || experiment::evaluate_scenario(&cfg, workers)).map(PyOutcome).map_err(err)
}

/// Re-hashes a bundle; returns the number of files checked.
#[pyfunction]
fn verify_bundle(directory: PathBuf) -> PyResult<usize> {
    experiment::verify_bundle(&directory).map(|m| m.files.len()).map_err(err)
}

/// Side-by-side CSV table of several reports.
#[pyfunction]
fn compare_reports(reports: Vec<PyRef<'_, PyReport>>) -> PyResult<String> {
    let refs: Vec<&EstimationReport> = reports.iter().map(|r| &r.0).collect();
    experiment::compare_reports(&refs).map(|c| c.to_csv()).map_err(err)
}

#[pymodule]
fn pydidim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DidimError", m.py().get_type::<DidimError>())?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyIterative>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyOutcome>()?;
    m.add_function(wrap_pyfunction!(parameter_names, m)?)?;
    m.add_function(wrap_pyfunction!(nominal_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(zero_phase_lowpass, m)?)?;
    m.add_function(wrap_pyfunction!(idim_identify, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(compare_reports, m)?)?;
    Ok(())
}
