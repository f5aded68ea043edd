//! Poisson bin probabilities, the exponential-link conditional intensity and
//! the spike-train log-likelihood.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::design::{DesignRow, LagConfig, Regressors};
use crate::error::{GlmError, Result};
use crate::kernel::{self, clamp_predictor, dot, Order};

/// Stimulus filter `k`, post-spike filter `h` and bias `mu`.
///
/// `k` has one entry per stimulus lag and location (location-major, oldest
/// lag first); `h` has one entry per history lag, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmParams {
    pub k: Vec<f64>,
    pub h: Vec<f64>,
    pub mu: f64,
}

impl GlmParams {
    pub fn new(k: Vec<f64>, h: Vec<f64>, mu: f64) -> Result<Self> {
        let p = Self { k, h, mu };
        if !p.is_finite() {
            return Err(GlmError::InvalidInput("parameters must be finite".into()));
        }
        Ok(p)
    }

    pub fn zeros(k_len: usize, h_len: usize) -> Self {
        Self {
            k: vec![0.0; k_len],
            h: vec![0.0; h_len],
            mu: 0.0,
        }
    }

    /// Zero filters sized for `cfg` with a stimulus over `num_locations`.
    pub fn zeros_for(cfg: &LagConfig, num_locations: usize) -> Self {
        Self::zeros(cfg.tau_k * num_locations, cfg.tau_h)
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.k.iter().chain(&self.h).all(|v| v.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.k.len() + self.h.len() + 1
    }

    /// Flattens to `[k | h | mu]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.k);
        v.extend_from_slice(&self.h);
        v.push(self.mu);
        v
    }

    pub fn from_flat(flat: &[f64], k_len: usize, h_len: usize) -> Result<Self> {
        if flat.len() != k_len + h_len + 1 {
            return Err(GlmError::DimensionMismatch {
                what: "flat parameter vector",
                expected: k_len + h_len + 1,
                got: flat.len(),
            });
        }
        Ok(Self {
            k: flat[..k_len].to_vec(),
            h: flat[k_len..k_len + h_len].to_vec(),
            mu: flat[k_len + h_len],
        })
    }
}

/// Conditional intensity in spikes per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    pub rate: f64,
    /// Set when the linear predictor was clamped before exponentiation.
    pub clamped: bool,
}

impl Intensity {
    pub(crate) fn from_predictor(eta: f64) -> Self {
        let (eta, clamped) = clamp_predictor(eta);
        Self {
            rate: eta.exp(),
            clamped,
        }
    }
}

/// Poisson probability of `y` events in a bin of width `delta` at intensity
/// `rate`: `(rate*delta)^y / y! * exp(-rate*delta)`.
pub fn bin_probability(y: u32, rate: f64, delta: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0 && delta.is_finite() && delta > 0.0) {
        return Err(GlmError::InvalidInput(format!(
            "rate and delta must be positive and finite (rate={rate}, delta={delta})"
        )));
    }
    let mean = rate * delta;
    if y == 0 {
        return Ok((-mean).exp());
    }
    let y_f = y as f64;
    Ok((y_f * mean.ln() - ln_factorial(y as u64) - mean).exp())
}

/// `exp(k . x + h . y + mu)`.
pub fn conditional_intensity(params: &GlmParams, row: &DesignRow) -> Result<Intensity> {
    if params.k.len() != row.x.len() {
        return Err(GlmError::DimensionMismatch {
            what: "stimulus filter",
            expected: row.x.len(),
            got: params.k.len(),
        });
    }
    if params.h.len() != row.y.len() {
        return Err(GlmError::DimensionMismatch {
            what: "post-spike filter",
            expected: row.y.len(),
            got: params.h.len(),
        });
    }
    Ok(Intensity::from_predictor(
        dot(&params.k, &row.x) + dot(&params.h, &row.y) + params.mu,
    ))
}

/// Log-likelihood without the parameter-independent constant:
/// `sum_t y_t log(lambda_t) - delta * sum_t lambda_t` over the design rows.
pub fn log_likelihood(params: &GlmParams, design: &[DesignRow], delta: f64) -> Result<f64> {
    Ok(evaluate_loglik(params, design, delta)?.0)
}

/// Log-likelihood plus the number of rows whose predictor was clamped.
pub fn evaluate_loglik<R: Regressors + ?Sized>(
    params: &GlmParams,
    design: &R,
    delta: f64,
) -> Result<(f64, usize)> {
    let eval = kernel::evaluate(&params.to_flat(), design, delta, Order::Value)?;
    Ok((eval.loglik, eval.clamped))
}
