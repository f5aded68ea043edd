//! Python bindings: `import pyspikeglm`.
//!
//! Stimuli are passed as a list of per-location series and spike trains as
//! lists of nonnegative counts. Network functions take a single series.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use spikeglm::design::{assemble_design, DesignRow, LagConfig, SpikeTrain, Stimulus};
use spikeglm::error::GlmError;
use spikeglm::network::{self, NeuronParams as CoreNeuronParams, PopulationData};
use spikeglm::optimizer::{self, FitOptions};
use spikeglm::separable::{self, SeparableOptions, SeparableParams as CoreSeparable, SpatioTemporalDesign};
use spikeglm::simulator::{self, SimConfig};
use spikeglm::{calculus, likelihood};

fn to_py(err: GlmError) -> PyErr {
    match err {
        GlmError::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Stimulus filter `k` (location-major), post-spike filter `h` and bias `mu`.
#[pyclass(name = "GlmParams", from_py_object)]
#[derive(Clone)]
pub struct PyGlmParams {
    #[pyo3(get, set)]
    pub k: Vec<f64>,
    #[pyo3(get, set)]
    pub h: Vec<f64>,
    #[pyo3(get, set)]
    pub mu: f64,
}

#[pymethods]
impl PyGlmParams {
    #[new]
    fn new(k: Vec<f64>, h: Vec<f64>, mu: f64) -> Self {
        Self { k, h, mu }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.core().to_flat()
    }

    fn __repr__(&self) -> String {
        format!("GlmParams(k={:?}, h={:?}, mu={})", self.k, self.h, self.mu)
    }
}

impl PyGlmParams {
    fn core(&self) -> likelihood::GlmParams {
        likelihood::GlmParams { k: self.k.clone(), h: self.h.clone(), mu: self.mu }
    }

    fn from_core(p: likelihood::GlmParams) -> Self {
        Self { k: p.k, h: p.h, mu: p.mu }
    }
}

/// Rank-1 receptive field `K[i][l] = s_filter[i] * t_filter[l]`.
#[pyclass(name = "SeparableParams", from_py_object)]
#[derive(Clone)]
pub struct PySeparableParams {
    #[pyo3(get, set)]
    pub s_filter: Vec<f64>,
    #[pyo3(get, set)]
    pub t_filter: Vec<f64>,
    #[pyo3(get, set)]
    pub h: Vec<f64>,
    #[pyo3(get, set)]
    pub mu: f64,
}

#[pymethods]
impl PySeparableParams {
    #[new]
    fn new(s_filter: Vec<f64>, t_filter: Vec<f64>, h: Vec<f64>, mu: f64) -> Self {
        Self { s_filter, t_filter, h, mu }
    }

    /// Full location-major stimulus filter.
    fn kernel(&self) -> Vec<f64> {
        self.core().kernel()
    }

    fn __repr__(&self) -> String {
        format!(
            "SeparableParams(s_filter={:?}, t_filter={:?}, h={:?}, mu={})",
            self.s_filter, self.t_filter, self.h, self.mu
        )
    }
}

impl PySeparableParams {
    fn core(&self) -> CoreSeparable {
        CoreSeparable {
            s_filter: self.s_filter.clone(),
            t_filter: self.t_filter.clone(),
            h: self.h.clone(),
            mu: self.mu,
        }
    }
}

/// One neuron of a coupled population; `h_couplings[j]` filters neuron `j`.
#[pyclass(name = "NeuronParams", from_py_object)]
#[derive(Clone)]
pub struct PyNeuronParams {
    #[pyo3(get, set)]
    pub k: Vec<f64>,
    #[pyo3(get, set)]
    pub h_couplings: Vec<Vec<f64>>,
    #[pyo3(get, set)]
    pub mu: f64,
}

#[pymethods]
impl PyNeuronParams {
    #[new]
    fn new(k: Vec<f64>, h_couplings: Vec<Vec<f64>>, mu: f64) -> Self {
        Self { k, h_couplings, mu }
    }

    fn __repr__(&self) -> String {
        format!("NeuronParams(k={:?}, h_couplings={:?}, mu={})", self.k, self.h_couplings, self.mu)
    }
}

impl PyNeuronParams {
    fn core(&self) -> CoreNeuronParams {
        CoreNeuronParams { k: self.k.clone(), h_couplings: self.h_couplings.clone(), mu: self.mu }
    }
}

/// Outcome of a fit; `params` holds the class matching the model.
#[pyclass(name = "FitResult")]
pub struct PyFitResult {
    #[pyo3(get)]
    pub params: Py<PyAny>,
    #[pyo3(get)]
    pub final_loglik: f64,
    #[pyo3(get)]
    pub iterations: usize,
    #[pyo3(get)]
    pub converged: bool,
    /// `(loglik, gradient max-norm)` per iteration.
    #[pyo3(get)]
    pub trace: Vec<(f64, f64)>,
    #[pyo3(get)]
    pub warnings: Vec<String>,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(converged={}, iterations={}, final_loglik={})",
            self.converged, self.iterations, self.final_loglik
        )
    }
}

fn wrap_result<P, Q>(
    py: Python<'_>,
    result: optimizer::FitResult<P>,
    convert: impl FnOnce(P) -> Q,
) -> PyResult<PyFitResult>
where
    Q: pyo3::PyClass + Into<pyo3::PyClassInitializer<Q>>,
{
    let optimizer::FitResult { params, final_loglik, iterations, converged, trace, warnings } = result;
    Ok(PyFitResult {
        params: Py::new(py, convert(params))?.into_any(),
        final_loglik,
        iterations,
        converged,
        trace: trace.iter().map(|e| (e.loglik, e.grad_max_norm)).collect(),
        warnings,
    })
}

fn stimulus(series: Vec<Vec<f64>>, delta: f64) -> PyResult<Stimulus> {
    Stimulus::new(series, delta).map_err(to_py)
}

fn spikes(counts: Vec<u32>, delta: f64) -> PyResult<SpikeTrain> {
    SpikeTrain::new(counts, delta).map_err(to_py)
}

fn lags(tau_k: usize, tau_h: usize) -> PyResult<LagConfig> {
    LagConfig::new(tau_k, tau_h).map_err(to_py)
}

fn design(series: Vec<Vec<f64>>, counts: Vec<u32>, delta: f64, tau_k: usize, tau_h: usize) -> PyResult<Vec<DesignRow>> {
    assemble_design(&stimulus(series, delta)?, &spikes(counts, delta)?, &lags(tau_k, tau_h)?).map_err(to_py)
}

fn fit_options(max_iters: usize, grad_tol: f64) -> FitOptions {
    FitOptions { max_iters, grad_tol, ..FitOptions::default() }
}

/// Log-likelihood `sum y eta - delta sum exp(eta)` over the usable bins.
#[pyfunction]
fn log_likelihood(
    params: PyGlmParams,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
) -> PyResult<f64> {
    let rows = design(stimulus, counts, delta, tau_k, tau_h)?;
    likelihood::log_likelihood(&params.core(), &rows, delta).map_err(to_py)
}

/// Gradient flattened as `[k | h | mu]`.
#[pyfunction]
fn gradient(
    params: PyGlmParams,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
) -> PyResult<Vec<f64>> {
    let rows = design(stimulus, counts, delta, tau_k, tau_h)?;
    Ok(calculus::gradient(&params.core(), &rows, delta).map_err(to_py)?.to_flat())
}

/// Hessian over `[k | h | mu]` as a list of rows.
#[pyfunction]
fn hessian(
    params: PyGlmParams,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let rows = design(stimulus, counts, delta, tau_k, tau_h)?;
    let m = calculus::hessian(&params.core(), &rows, delta).map_err(to_py)?.matrix;
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Largest relative error between the analytic gradient and central
/// differences.
#[pyfunction]
#[pyo3(signature = (params, stimulus, counts, delta, tau_k, tau_h, step = 1e-5))]
#[allow(clippy::too_many_arguments)]
fn check_gradient(
    params: PyGlmParams,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
    step: f64,
) -> PyResult<f64> {
    let rows = design(stimulus, counts, delta, tau_k, tau_h)?;
    Ok(calculus::check_gradient_fd(&params.core(), &rows, delta, step).map_err(to_py)?.max_relative_error)
}

/// Damped Newton fit of a single neuron from the closed-form bias start.
#[pyfunction]
#[pyo3(signature = (stimulus, counts, delta, tau_k, tau_h, max_iters = 100, grad_tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
    max_iters: usize,
    grad_tol: f64,
) -> PyResult<PyFitResult> {
    let rows = design(stimulus, counts, delta, tau_k, tau_h)?;
    let result = py
        .detach(|| optimizer::fit(&rows, delta, &fit_options(max_iters, grad_tol)))
        .map_err(to_py)?;
    wrap_result(py, result, PyGlmParams::from_core)
}

/// Alternating multi-start fit of a rank-1 receptive field.
#[pyfunction]
#[pyo3(signature = (stimulus, counts, delta, tau_k, tau_h, starts = 3, seed = 0, max_iters = 100, grad_tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn fit_separable(
    py: Python<'_>,
    stimulus: Vec<Vec<f64>>,
    counts: Vec<u32>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
    starts: usize,
    seed: u64,
    max_iters: usize,
    grad_tol: f64,
) -> PyResult<PyFitResult> {
    let stim = self::stimulus(stimulus, delta)?;
    let train = spikes(counts, delta)?;
    let cfg = lags(tau_k, tau_h)?;
    let options = SeparableOptions { fit: fit_options(max_iters, grad_tol), starts, seed, ..SeparableOptions::default() };
    let result = py
        .detach(|| {
            let design = SpatioTemporalDesign::new(&stim, &train, &cfg)?;
            separable::fit_separable(&design, delta, &options)
        })
        .map_err(to_py)?;
    wrap_result(py, result, |p| PySeparableParams { s_filter: p.s_filter, t_filter: p.t_filter, h: p.h, mu: p.mu })
}

/// Independent per-neuron fits of a coupled population driven by a
/// single-location stimulus.
#[pyfunction]
#[pyo3(signature = (stimulus, trains, delta, tau_k, tau_h, max_iters = 100, grad_tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn fit_network(
    py: Python<'_>,
    stimulus: Vec<f64>,
    trains: Vec<Vec<u32>>,
    delta: f64,
    tau_k: usize,
    tau_h: usize,
    max_iters: usize,
    grad_tol: f64,
) -> PyResult<Vec<PyFitResult>> {
    let stim = Stimulus::scalar(stimulus, delta).map_err(to_py)?;
    let trains = trains.into_iter().map(|c| spikes(c, delta)).collect::<PyResult<Vec<_>>>()?;
    let data = PopulationData::new(stim, trains).map_err(to_py)?;
    let cfg = lags(tau_k, tau_h)?;
    let fits = py
        .detach(|| network::fit_population(&data, &cfg, &fit_options(max_iters, grad_tol)))
        .map_err(to_py)?;
    fits.into_iter()
        .map(|r| {
            let r = r.map_err(to_py)?;
            wrap_result(py, r, |p| PyNeuronParams { k: p.k, h_couplings: p.h_couplings, mu: p.mu })
        })
        .collect()
}

/// Simulates one neuron on seeded Gaussian white noise; returns
/// `(stimulus per location, counts)`.
#[pyfunction]
#[pyo3(signature = (params, num_bins, delta, seed, num_locations = 1))]
fn simulate(
    params: PyGlmParams,
    num_bins: usize,
    delta: f64,
    seed: u64,
    num_locations: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<u32>)> {
    let sim = SimConfig::new(num_bins, delta, seed);
    let stim = simulator::generate_stimulus(&sim, num_locations).map_err(to_py)?;
    let train = simulator::simulate_spike_train(&params.core(), &stim, &sim).map_err(to_py)?;
    let series = (0..num_locations).map(|loc| stim.location(loc).to_vec()).collect();
    Ok((series, train.counts().to_vec()))
}

/// Simulates a coupled population on a seeded single-location stimulus;
/// returns `(stimulus, counts per neuron)`.
#[pyfunction]
fn simulate_network(
    neurons: Vec<PyNeuronParams>,
    num_bins: usize,
    delta: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<Vec<u32>>)> {
    let sim = SimConfig::new(num_bins, delta, seed);
    let stim = simulator::generate_stimulus(&sim, 1).map_err(to_py)?;
    let params: Vec<CoreNeuronParams> = neurons.iter().map(PyNeuronParams::core).collect();
    let data = simulator::simulate_population(&params, &stim, &sim).map_err(to_py)?;
    Ok((
        data.stimulus().location(0).to_vec(),
        data.trains().iter().map(|t| t.counts().to_vec()).collect(),
    ))
}

/// Resolves the `(a s, t / a)` ambiguity: unit-norm `s` with a positive
/// first nonzero entry.
#[pyfunction]
fn canonicalize(s_filter: Vec<f64>, t_filter: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    separable::canonicalize(&s_filter, &t_filter).map_err(to_py)
}

#[pymodule]
fn pyspikeglm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGlmParams>()?;
    m.add_class::<PySeparableParams>()?;
    m.add_class::<PyNeuronParams>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(hessian, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_separable, m)?)?;
    m.add_function(wrap_pyfunction!(fit_network, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_network, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    Ok(())
}
