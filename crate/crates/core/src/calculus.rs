//! Analytic gradient and Hessian of the single-neuron log-likelihood, and
//! central-difference checks against them.
//!
//! The flattened parameter order is `[k | h | mu]` everywhere. Sums run over
//! design rows sequentially, so results are deterministic for fixed inputs.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::Regressors;
use crate::error::{GlmError, Result};
use crate::kernel::{self, Order};
use crate::likelihood::GlmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub d_k: Vec<f64>,
    pub d_h: Vec<f64>,
    pub d_mu: f64,
}

impl Gradient {
    fn from_flat(flat: &[f64], k_len: usize, h_len: usize) -> Self {
        Self {
            d_k: flat[..k_len].to_vec(),
            d_h: flat[k_len..k_len + h_len].to_vec(),
            d_mu: flat[k_len + h_len],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.d_k.clone();
        v.extend_from_slice(&self.d_h);
        v.push(self.d_mu);
        v
    }

    pub fn max_norm(&self) -> f64 {
        max_abs(&self.to_flat())
    }
}

/// Full symmetric Hessian with block layout `[k | h | mu]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub matrix: DMatrix<f64>,
    pub k_len: usize,
    pub h_len: usize,
}

impl Hessian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kk(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.k_len, self.k_len)).into_owned()
    }

    pub fn hh(&self) -> DMatrix<f64> {
        self.matrix
            .view((self.k_len, self.k_len), (self.h_len, self.h_len))
            .into_owned()
    }

    pub fn kh(&self) -> DMatrix<f64> {
        self.matrix.view((0, self.k_len), (self.k_len, self.h_len)).into_owned()
    }

    pub fn mu_mu(&self) -> f64 {
        let m = self.dim() - 1;
        self.matrix[(m, m)]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        max_asymmetry(&self.matrix) <= tol
    }

    /// Largest eigenvalue divided by the largest eigenvalue magnitude.
    pub fn max_relative_eigenvalue(&self) -> f64 {
        max_relative_eigenvalue(&self.matrix)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `max eig / max |eig|` of a symmetric matrix; `0` for the zero matrix.
pub fn max_relative_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let scale = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    eig.iter().fold(f64::NEG_INFINITY, |a, &e| a.max(e)) / scale
}

pub fn gradient<R: Regressors + ?Sized>(params: &GlmParams, design: &R, delta: f64) -> Result<Gradient> {
    let eval = kernel::evaluate(&params.to_flat(), design, delta, Order::Gradient)?;
    Ok(Gradient::from_flat(eval.gradient.as_slice(), params.k.len(), params.h.len()))
}

pub fn hessian<R: Regressors + ?Sized>(params: &GlmParams, design: &R, delta: f64) -> Result<Hessian> {
    let eval = kernel::evaluate(&params.to_flat(), design, delta, Order::Hessian)?;
    Ok(Hessian {
        matrix: eval.hessian.expect("requested"),
        k_len: params.k.len(),
        h_len: params.h.len(),
    })
}

/// `|a - n| / max(|a|, |n|, 1)`: relative for large entries, absolute near 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central differences of a scalar function. `f` returns the value and
/// whether the evaluation was clamped; a coordinate is flagged when either
/// probe was.
pub fn central_difference<F>(f: F, theta: &[f64], step: f64) -> (Vec<f64>, Vec<bool>)
where
    F: Fn(&[f64]) -> (f64, bool),
{
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    let mut flags = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let (up, c_up) = f(&probe);
        probe[i] = theta[i] - step;
        let (down, c_down) = f(&probe);
        probe[i] = theta[i];
        out.push((up - down) / (2.0 * step));
        flags.push(c_up || c_down);
    }
    (out, flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    /// Coordinates whose probes hit the predictor clamp.
    pub unreliable: Vec<usize>,
}

impl GradientCheckReport {
    pub fn from_parts(analytic: Vec<f64>, numeric: Vec<f64>, flags: Vec<bool>) -> Self {
        let relative_errors: Vec<f64> = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .collect();
        let max_relative_error = relative_errors.iter().fold(0.0f64, |m, &e| m.max(e));
        let unreliable = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect();
        Self {
            analytic,
            numeric,
            relative_errors,
            max_relative_error,
            unreliable,
        }
    }
}

pub(crate) fn check_step(step: f64) -> Result<()> {
    if (1e-8..=1e-2).contains(&step) {
        Ok(())
    } else {
        Err(GlmError::InvalidInput(format!(
            "finite-difference step must lie in [1e-8, 1e-2], got {step}"
        )))
    }
}

/// Compares the analytic gradient with central differences of the
/// log-likelihood.
pub fn check_gradient_fd<R: Regressors + ?Sized>(
    params: &GlmParams,
    design: &R,
    delta: f64,
    step: f64,
) -> Result<GradientCheckReport> {
    check_step(step)?;
    let theta = params.to_flat();
    let analytic = kernel::evaluate(&theta, design, delta, Order::Gradient)?;
    let (numeric, flags) = central_difference(
        |t| {
            let e = kernel::evaluate(t, design, delta, Order::Value).expect("dims checked");
            (e.loglik, e.clamped > 0)
        },
        &theta,
        step,
    );
    Ok(GradientCheckReport::from_parts(
        analytic.gradient.as_slice().to_vec(),
        numeric,
        flags,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianCheckReport {
    pub max_relative_error: f64,
    pub numeric: DMatrix<f64>,
}

/// Compares the analytic Hessian with central differences of the analytic
/// gradient, column by column.
pub fn check_hessian_fd<R: Regressors + ?Sized>(
    params: &GlmParams,
    design: &R,
    delta: f64,
    step: f64,
) -> Result<HessianCheckReport> {
    check_step(step)?;
    let theta = params.to_flat();
    let analytic = kernel::evaluate(&theta, design, delta, Order::Hessian)?
        .hessian
        .expect("requested");
    let numeric = hessian_by_differences(
        |t| {
            kernel::evaluate(t, design, delta, Order::Gradient)
                .expect("dims checked")
                .gradient
                .as_slice()
                .to_vec()
        },
        &theta,
        step,
    );
    Ok(HessianCheckReport {
        max_relative_error: max_matrix_relative_error(&analytic, &numeric),
        numeric,
    })
}

/// Jacobian of a gradient function by central differences.
pub fn hessian_by_differences<F>(grad: F, theta: &[f64], step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = theta.len();
    let mut probe = theta.to_vec();
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        probe[j] = theta[j] + step;
        let up = grad(&probe);
        probe[j] = theta[j] - step;
        let down = grad(&probe);
        probe[j] = theta[j];
        for i in 0..p {
            m[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    m
}

pub fn max_matrix_relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (&a, &n)| m.max(relative_error(a, n)))
}
