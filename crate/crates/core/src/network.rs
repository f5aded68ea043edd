//! Coupled populations: each neuron's intensity sees the stimulus and every
//! neuron's recent spikes through coupling filters `h_ij` (self term
//! included).
//!
//! Neuron `i`'s parameters only enter neuron `i`'s term of the population
//! log-likelihood, so each neuron is an ordinary GLM whose history regressor
//! is the concatenation `[y_1 | y_2 | ... | y_n]`, and neurons are fitted
//! independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, Hessian};
use crate::design::{DesignRow, LagConfig, Regressors, RowVisitor, SpikeTrain, Stimulus};
use crate::error::{GlmError, Result};
use crate::kernel::dot;
use crate::likelihood::{evaluate_loglik, GlmParams, Intensity};
use crate::optimizer::{self, FitOptions, FitResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronParams {
    pub k: Vec<f64>,
    /// `h_couplings[j]` filters neuron `j`'s spikes (oldest lag first).
    pub h_couplings: Vec<Vec<f64>>,
    pub mu: f64,
}

impl NeuronParams {
    pub fn zeros(tau_k: usize, tau_h: usize, num_neurons: usize) -> Self {
        Self {
            k: vec![0.0; tau_k],
            h_couplings: vec![vec![0.0; tau_h]; num_neurons],
            mu: 0.0,
        }
    }

    /// The equivalent single-neuron parameters with concatenated couplings.
    pub fn to_glm(&self) -> GlmParams {
        GlmParams {
            k: self.k.clone(),
            h: self.h_couplings.concat(),
            mu: self.mu,
        }
    }

    pub fn from_glm(params: &GlmParams, num_neurons: usize) -> Result<Self> {
        if num_neurons == 0 || !params.h.len().is_multiple_of(num_neurons) {
            return Err(GlmError::DimensionMismatch {
                what: "concatenated coupling filters",
                expected: num_neurons,
                got: params.h.len(),
            });
        }
        let tau_h = params.h.len() / num_neurons;
        Ok(Self {
            k: params.k.clone(),
            h_couplings: params.h.chunks(tau_h).map(<[f64]>::to_vec).collect(),
            mu: params.mu,
        })
    }
}

/// A single-location stimulus and one aligned spike train per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationData {
    stimulus: Stimulus,
    trains: Vec<SpikeTrain>,
}

impl PopulationData {
    pub fn new(stimulus: Stimulus, trains: Vec<SpikeTrain>) -> Result<Self> {
        if trains.is_empty() {
            return Err(GlmError::InvalidInput("population has no spike trains".into()));
        }
        for train in &trains {
            if train.num_bins() != stimulus.num_bins() {
                return Err(GlmError::LengthMismatch {
                    what: "spike train bins vs stimulus bins",
                    left: train.num_bins(),
                    right: stimulus.num_bins(),
                });
            }
            if train.delta() != stimulus.delta() {
                return Err(GlmError::DeltaMismatch { left: train.delta(), right: stimulus.delta() });
            }
        }
        Ok(Self { stimulus, trains })
    }

    pub fn stimulus(&self) -> &Stimulus {
        &self.stimulus
    }

    pub fn trains(&self) -> &[SpikeTrain] {
        &self.trains
    }

    pub fn num_neurons(&self) -> usize {
        self.trains.len()
    }

    pub fn delta(&self) -> f64 {
        self.stimulus.delta()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.num_neurons() {
            Ok(())
        } else {
            Err(GlmError::NeuronIndex { index: i, size: self.num_neurons() })
        }
    }
}

/// Shared regressors for every neuron plus each neuron's observed counts.
#[derive(Debug, Clone)]
pub struct PopulationDesign {
    rows: Vec<DesignRow>,
    observed: Vec<Vec<u32>>,
}

/// One neuron's view of a [`PopulationDesign`].
#[derive(Debug, Clone, Copy)]
pub struct NeuronRows<'a> {
    rows: &'a [DesignRow],
    observed: &'a [u32],
}

impl PopulationDesign {
    /// Rows for bins `max(tau_k, tau_h)..T`; the stimulus must have a single
    /// location.
    pub fn new(data: &PopulationData, cfg: &LagConfig) -> Result<Self> {
        let stim = data.stimulus();
        if stim.num_locations() != 1 {
            return Err(GlmError::DimensionMismatch {
                what: "network stimulus locations",
                expected: 1,
                got: stim.num_locations(),
            });
        }
        let num_bins = stim.num_bins();
        cfg.validate_for(num_bins)?;
        let counts: Vec<Vec<f64>> = data.trains().iter().map(SpikeTrain::counts_f64).collect();
        let x = stim.location(0);
        let start = cfg.burn_in();
        let rows = (start..num_bins)
            .map(|t| {
                let mut y = Vec::with_capacity(counts.len() * cfg.tau_h);
                for c in &counts {
                    y.extend_from_slice(&c[t - cfg.tau_h..t]);
                }
                DesignRow { x: x[t - cfg.tau_k..t].to_vec(), y, bin_index: t, observed: 0 }
            })
            .collect();
        let observed = data
            .trains()
            .iter()
            .map(|tr| tr.counts()[start.min(num_bins)..].to_vec())
            .collect();
        Ok(Self { rows, observed })
    }

    pub fn num_neurons(&self) -> usize {
        self.observed.len()
    }

    pub fn neuron(&self, i: usize) -> Result<NeuronRows<'_>> {
        let observed = self
            .observed
            .get(i)
            .ok_or(GlmError::NeuronIndex { index: i, size: self.observed.len() })?;
        Ok(NeuronRows { rows: &self.rows, observed })
    }
}

impl NeuronRows<'_> {
    /// Materialized rows with this neuron's observed counts.
    pub fn to_rows(&self) -> Vec<DesignRow> {
        self.rows
            .iter()
            .zip(self.observed)
            .map(|(r, &obs)| DesignRow { observed: obs, ..r.clone() })
            .collect()
    }
}

impl Regressors for NeuronRows<'_> {
    fn stimulus_len(&self) -> usize {
        self.rows.stimulus_len()
    }

    fn history_len(&self) -> usize {
        self.rows.history_len()
    }

    fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn for_each_row(&self, f: &mut RowVisitor<'_>) {
        for (row, &obs) in self.rows.iter().zip(self.observed) {
            f(&row.x, &row.y, obs);
        }
    }
}

/// Materialized design for neuron `i` (history block ordered by neuron).
pub fn neuron_design(data: &PopulationData, cfg: &LagConfig, i: usize) -> Result<Vec<DesignRow>> {
    data.check_index(i)?;
    Ok(PopulationDesign::new(data, cfg)?.neuron(i)?.to_rows())
}

/// `exp(k_i . x + sum_j h_ij . y_j + mu_i)`.
pub fn network_intensity<H: AsRef<[f64]>>(params_i: &NeuronParams, x: &[f64], histories: &[H]) -> Result<Intensity> {
    if histories.len() != params_i.h_couplings.len() {
        return Err(GlmError::DimensionMismatch {
            what: "history vectors per coupling filter",
            expected: params_i.h_couplings.len(),
            got: histories.len(),
        });
    }
    if x.len() != params_i.k.len() {
        return Err(GlmError::DimensionMismatch { what: "stimulus lag vector", expected: params_i.k.len(), got: x.len() });
    }
    let mut eta = dot(&params_i.k, x);
    for (h, y) in params_i.h_couplings.iter().zip(histories) {
        let y = y.as_ref();
        if y.len() != h.len() {
            return Err(GlmError::DimensionMismatch { what: "history vector", expected: h.len(), got: y.len() });
        }
        eta += dot(h, y);
    }
    Ok(Intensity::from_predictor(eta + params_i.mu))
}

fn check_neuron_params(params: &NeuronParams, cfg: &LagConfig, num_neurons: usize) -> Result<()> {
    if params.k.len() != cfg.tau_k {
        return Err(GlmError::DimensionMismatch { what: "stimulus filter", expected: cfg.tau_k, got: params.k.len() });
    }
    if params.h_couplings.len() != num_neurons {
        return Err(GlmError::DimensionMismatch {
            what: "coupling filters",
            expected: num_neurons,
            got: params.h_couplings.len(),
        });
    }
    if let Some(bad) = params.h_couplings.iter().find(|h| h.len() != cfg.tau_h) {
        return Err(GlmError::DimensionMismatch { what: "coupling filter", expected: cfg.tau_h, got: bad.len() });
    }
    Ok(())
}

/// Neuron `i`'s term of the population log-likelihood.
pub fn neuron_log_likelihood(params_i: &NeuronParams, i: usize, data: &PopulationData, cfg: &LagConfig) -> Result<f64> {
    data.check_index(i)?;
    check_neuron_params(params_i, cfg, data.num_neurons())?;
    let design = PopulationDesign::new(data, cfg)?;
    Ok(evaluate_loglik(&params_i.to_glm(), &design.neuron(i)?, data.delta())?.0)
}

/// Sum over neurons of each neuron's log-likelihood under coupled
/// intensities.
pub fn network_log_likelihood(all_params: &[NeuronParams], data: &PopulationData, cfg: &LagConfig) -> Result<f64> {
    if all_params.len() != data.num_neurons() {
        return Err(GlmError::DimensionMismatch {
            what: "parameter sets",
            expected: data.num_neurons(),
            got: all_params.len(),
        });
    }
    let design = PopulationDesign::new(data, cfg)?;
    let mut total = 0.0;
    for (i, p) in all_params.iter().enumerate() {
        check_neuron_params(p, cfg, data.num_neurons())?;
        total += evaluate_loglik(&p.to_glm(), &design.neuron(i)?, data.delta())?.0;
    }
    Ok(total)
}

/// Derivative of the population log-likelihood with respect to `h_ij`:
/// `sum_t y_{i,t} y_j - delta * sum_t y_j lambda_i`.
pub fn coupling_gradient(
    params_i: &NeuronParams,
    i: usize,
    data: &PopulationData,
    cfg: &LagConfig,
    j: usize,
) -> Result<Vec<f64>> {
    data.check_index(i)?;
    data.check_index(j)?;
    check_neuron_params(params_i, cfg, data.num_neurons())?;
    let design = PopulationDesign::new(data, cfg)?;
    let g = calculus::gradient(&params_i.to_glm(), &design.neuron(i)?, data.delta())?;
    Ok(g.d_h[j * cfg.tau_h..(j + 1) * cfg.tau_h].to_vec())
}

/// Hessian over neuron `i`'s own parameters, layout `[k_i | h_i1 .. h_in | mu_i]`.
pub fn neuron_hessian(params_i: &NeuronParams, i: usize, data: &PopulationData, cfg: &LagConfig) -> Result<Hessian> {
    data.check_index(i)?;
    check_neuron_params(params_i, cfg, data.num_neurons())?;
    let design = PopulationDesign::new(data, cfg)?;
    calculus::hessian(&params_i.to_glm(), &design.neuron(i)?, data.delta())
}

/// Per-neuron outcome; neurons that cannot be fitted carry their error.
pub type NeuronFit = Result<FitResult<NeuronParams>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

fn fit_neuron(design: &PopulationDesign, i: usize, delta: f64, options: &FitOptions) -> NeuronFit {
    let rows = design.neuron(i)?;
    let n = design.num_neurons();
    let result = optimizer::fit(&rows, delta, options)?;
    let params = NeuronParams::from_glm(&result.params, n)?;
    Ok(result.map_params(|_| params))
}

/// Fits every neuron independently, in parallel. Results are ordered by
/// neuron index.
pub fn fit_population(data: &PopulationData, cfg: &LagConfig, options: &FitOptions) -> Result<Vec<NeuronFit>> {
    fit_population_with(data, cfg, options, Execution::Parallel)
}

pub fn fit_population_with(
    data: &PopulationData,
    cfg: &LagConfig,
    options: &FitOptions,
    execution: Execution,
) -> Result<Vec<NeuronFit>> {
    options.validate()?;
    let design = PopulationDesign::new(data, cfg)?;
    let delta = data.delta();
    let fits = match execution {
        Execution::Sequential => (0..data.num_neurons())
            .map(|i| fit_neuron(&design, i, delta, options))
            .collect(),
        Execution::Parallel => (0..data.num_neurons())
            .into_par_iter()
            .map(|i| fit_neuron(&design, i, delta, options))
            .collect(),
    };
    Ok(fits)
}
