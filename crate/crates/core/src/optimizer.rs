//! Damped Newton-Raphson ascent with backtracking.
//!
//! Each step solves `(-H + eps I) d = g`, starting with `eps = 0` and
//! escalating `eps` from `FitOptions::damping` by factors of ten whenever the
//! Cholesky factorization fails, then tries `theta + alpha d` for
//! `alpha = 1, 1/2, ..., 2^-20` until the log-likelihood increases.
//!
//! Close to the optimum the predicted gain of a step falls below what the
//! summed log-likelihood can resolve. In that regime a step is accepted when
//! it reduces the gradient max-norm and does not lower the log-likelihood by
//! more than its rounding floor (`ROUNDING_FLOOR * (1 + |L|)`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::max_abs;
use crate::design::Regressors;
use crate::error::{GlmError, Result, StallDiagnostics};
use crate::kernel::{self, Order};
use crate::likelihood::GlmParams;

/// Relative resolution assumed for a summed log-likelihood.
pub const ROUNDING_FLOOR: f64 = 1e-13;

const MAX_HALVINGS: u32 = 20;
const MAX_DAMPING_ESCALATIONS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Convergence threshold on the gradient max-norm.
    pub grad_tol: f64,
    /// Stop when the accepted step's max-norm falls below this.
    pub step_tol: f64,
    /// First ridge tried when `-H` fails to factorize.
    pub damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            damping: 1e-6,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.grad_tol > 0.0
            && self.step_tol > 0.0
            && self.damping > 0.0
            && self.grad_tol.is_finite()
            && self.step_tol.is_finite()
            && self.damping.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GlmError::InvalidInput(format!("fit options must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub loglik: f64,
    pub grad_max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P = GlmParams> {
    pub params: P,
    pub final_loglik: f64,
    /// Number of accepted Newton steps.
    pub iterations: usize,
    pub converged: bool,
    /// One entry for the starting point and one per accepted step.
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

impl<P> FitResult<P> {
    pub fn map_params<Q>(self, f: impl FnOnce(P) -> Q) -> FitResult<Q> {
        FitResult {
            params: f(self.params),
            final_loglik: self.final_loglik,
            iterations: self.iterations,
            converged: self.converged,
            trace: self.trace,
            warnings: self.warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Accepted step length; `0` when the input was already stationary.
    pub alpha: f64,
    pub halvings: u32,
    pub damping: f64,
    pub loglik_before: f64,
    pub loglik_after: f64,
    pub grad_max_norm: f64,
    /// Max-norm of the accepted parameter change.
    pub step_max_norm: f64,
}

/// Log-likelihood with first and second derivatives at a point.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub clamped: usize,
}

/// A twice-differentiable objective to be maximized over a flat vector.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Value and number of clamped evaluations.
    fn value(&self, theta: &[f64]) -> Result<(f64, usize)>;
    fn gradient(&self, theta: &[f64]) -> Result<DVector<f64>>;
    fn derivatives(&self, theta: &[f64]) -> Result<Derivatives>;
}

/// The single-neuron exponential-link GLM over `[k | h | mu]`.
pub struct GlmObjective<'a, R: Regressors + ?Sized> {
    pub rows: &'a R,
    pub delta: f64,
}

impl<'a, R: Regressors + ?Sized> GlmObjective<'a, R> {
    pub fn new(rows: &'a R, delta: f64) -> Self {
        Self { rows, delta }
    }
}

impl<R: Regressors + ?Sized> Objective for GlmObjective<'_, R> {
    fn dim(&self) -> usize {
        self.rows.stimulus_len() + self.rows.history_len() + 1
    }

    fn value(&self, theta: &[f64]) -> Result<(f64, usize)> {
        let e = kernel::evaluate(theta, self.rows, self.delta, Order::Value)?;
        Ok((e.loglik, e.clamped))
    }

    fn gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        Ok(kernel::evaluate(theta, self.rows, self.delta, Order::Gradient)?.gradient)
    }

    fn derivatives(&self, theta: &[f64]) -> Result<Derivatives> {
        let e = kernel::evaluate(theta, self.rows, self.delta, Order::Hessian)?;
        Ok(Derivatives {
            loglik: e.loglik,
            gradient: e.gradient,
            hessian: e.hessian.expect("requested"),
            clamped: e.clamped,
        })
    }
}

/// Solves `(-H + eps I) d = g`, returning `d` and the ridge used.
fn newton_direction(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    damping: f64,
) -> Option<(DVector<f64>, f64)> {
    let neg = -hessian;
    let mut eps = 0.0;
    for attempt in 0..=MAX_DAMPING_ESCALATIONS {
        let mut a = neg.clone();
        if eps > 0.0 {
            for i in 0..a.nrows() {
                a[(i, i)] += eps;
            }
        }
        if let Some(chol) = a.cholesky() {
            let d = chol.solve(gradient);
            if d.iter().all(|v| v.is_finite()) {
                return Some((d, eps));
            }
        }
        eps = damping * 10f64.powi(attempt as i32);
    }
    None
}

/// One safeguarded Newton step from `theta` with precomputed derivatives.
pub fn newton_step_on<O: Objective + ?Sized>(
    objective: &O,
    theta: &[f64],
    at: &Derivatives,
    options: &FitOptions,
) -> Result<(Vec<f64>, StepDiagnostics)> {
    let grad_max_norm = max_abs(at.gradient.as_slice());
    let mut diag = StepDiagnostics {
        alpha: 0.0,
        halvings: 0,
        damping: 0.0,
        loglik_before: at.loglik,
        loglik_after: at.loglik,
        grad_max_norm,
        step_max_norm: 0.0,
    };
    if grad_max_norm < options.grad_tol {
        return Ok((theta.to_vec(), diag));
    }
    let stall = |damping: f64, halvings: u32| {
        GlmError::StalledStep(StallDiagnostics {
            loglik: at.loglik,
            grad_max_norm,
            damping,
            halvings,
        })
    };
    let (direction, damping) =
        newton_direction(&at.hessian, &at.gradient, options.damping).ok_or_else(|| stall(f64::INFINITY, 0))?;
    diag.damping = damping;
    let slope = at.gradient.dot(&direction);
    let floor = ROUNDING_FLOOR * (1.0 + at.loglik.abs());

    let mut alpha = 1.0;
    let mut candidate = vec![0.0; theta.len()];
    for halvings in 0..=MAX_HALVINGS {
        for ((c, t), d) in candidate.iter_mut().zip(theta).zip(direction.iter()) {
            *c = t + alpha * d;
        }
        let (ll, _) = objective.value(&candidate)?;
        let accept = if ll > at.loglik {
            true
        } else if alpha * slope <= floor && ll >= at.loglik - floor {
            let g = objective.gradient(&candidate)?;
            max_abs(g.as_slice()) < grad_max_norm
        } else {
            false
        };
        if accept && ll.is_finite() {
            diag.alpha = alpha;
            diag.halvings = halvings;
            diag.loglik_after = ll;
            diag.step_max_norm = alpha * max_abs(direction.as_slice());
            return Ok((candidate, diag));
        }
        alpha *= 0.5;
    }
    Err(stall(damping, MAX_HALVINGS))
}

/// Outcome of [`maximize`] on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatFit {
    pub theta: Vec<f64>,
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

impl FlatFit {
    pub fn into_result<P>(self, params: P) -> FitResult<P> {
        FitResult {
            params,
            final_loglik: self.final_loglik,
            iterations: self.iterations,
            converged: self.converged,
            trace: self.trace,
            warnings: self.warnings,
        }
    }
}

/// Runs Newton steps until the gradient max-norm drops below `grad_tol`, the
/// step falls below `step_tol`, or `max_iters` steps have been taken.
pub fn maximize<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    options: &FitOptions,
) -> Result<FlatFit> {
    options.validate()?;
    if init.len() != objective.dim() {
        return Err(GlmError::DimensionMismatch {
            what: "initial parameter vector",
            expected: objective.dim(),
            got: init.len(),
        });
    }
    let mut theta = init.to_vec();
    let mut at = objective.derivatives(&theta)?;
    let mut warnings = Vec::new();
    let mut clamp_warned = false;
    let mut note_clamp = |clamped: usize, iteration: usize, warnings: &mut Vec<String>| {
        if clamped > 0 && !clamp_warned {
            clamp_warned = true;
            warnings.push(format!(
                "linear predictor clamped in {clamped} bins at iteration {iteration}"
            ));
        }
    };
    note_clamp(at.clamped, 0, &mut warnings);
    let mut trace = vec![TraceEntry {
        loglik: at.loglik,
        grad_max_norm: max_abs(at.gradient.as_slice()),
    }];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let grad_norm = max_abs(at.gradient.as_slice());
        if grad_norm < options.grad_tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iters {
            warnings.push(format!(
                "reached max_iters={} with gradient max-norm {grad_norm:e}",
                options.max_iters
            ));
            break;
        }
        let (next, diag) = match newton_step_on(objective, &theta, &at, options) {
            Ok(step) => step,
            Err(GlmError::StalledStep(d)) => {
                warnings.push(format!("stalled step at iteration {iterations}: {d}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if diag.damping > 0.0 {
            warnings.push(format!(
                "iteration {iterations}: Hessian damped with ridge {:e}",
                diag.damping
            ));
        }
        theta = next;
        iterations += 1;
        at = objective.derivatives(&theta)?;
        note_clamp(at.clamped, iterations, &mut warnings);
        let grad_norm = max_abs(at.gradient.as_slice());
        trace.push(TraceEntry {
            loglik: at.loglik,
            grad_max_norm: grad_norm,
        });
        if diag.step_max_norm < options.step_tol {
            converged = grad_norm < options.grad_tol;
            if !converged {
                warnings.push(format!(
                    "step max-norm {:e} below step_tol with gradient max-norm {grad_norm:e}",
                    diag.step_max_norm
                ));
            }
            break;
        }
    }

    Ok(FlatFit {
        theta,
        final_loglik: at.loglik,
        iterations,
        converged,
        trace,
        warnings,
    })
}

/// Zero filters with the bias at its closed-form maximum
/// `mu = log(n_sp / (delta * N_rows))`.
pub fn initialize<R: Regressors + ?Sized>(design: &R, delta: f64) -> Result<GlmParams> {
    let rows = design.num_rows();
    if rows == 0 {
        return Err(GlmError::InsufficientData("design has no usable bins".into()));
    }
    let n_sp = design.total_spikes();
    if n_sp == 0 {
        return Err(GlmError::InsufficientData(
            "no spikes in the usable bins; the bias estimate diverges".into(),
        ));
    }
    Ok(GlmParams {
        k: vec![0.0; design.stimulus_len()],
        h: vec![0.0; design.history_len()],
        mu: (n_sp as f64 / (delta * rows as f64)).ln(),
    })
}

/// A single safeguarded Newton step on the single-neuron log-likelihood.
pub fn newton_step<R: Regressors + ?Sized>(
    params: &GlmParams,
    design: &R,
    delta: f64,
    options: &FitOptions,
) -> Result<(GlmParams, StepDiagnostics)> {
    let objective = GlmObjective::new(design, delta);
    let theta = params.to_flat();
    let at = objective.derivatives(&theta)?;
    let (next, diag) = newton_step_on(&objective, &theta, &at, options)?;
    Ok((GlmParams::from_flat(&next, params.k.len(), params.h.len())?, diag))
}

/// Maximum-likelihood fit from the standard initialization.
pub fn fit<R: Regressors + ?Sized>(design: &R, delta: f64, options: &FitOptions) -> Result<FitResult> {
    let init = initialize(design, delta)?;
    fit_from(design, delta, &init, options)
}

/// Maximum-likelihood fit from a caller-supplied starting point.
pub fn fit_from<R: Regressors + ?Sized>(
    design: &R,
    delta: f64,
    init: &GlmParams,
    options: &FitOptions,
) -> Result<FitResult> {
    if design.total_spikes() == 0 {
        return Err(GlmError::InsufficientData("no spikes in the usable bins".into()));
    }
    let objective = GlmObjective::new(design, delta);
    let flat = maximize(&objective, &init.to_flat(), options)?;
    let params = GlmParams::from_flat(&flat.theta, init.k.len(), init.h.len())?;
    Ok(flat.into_result(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{assemble_design, DesignRow, LagConfig, SpikeTrain, Stimulus};
    use crate::likelihood::log_likelihood;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bias_rows(n_rows: usize, n_sp: usize) -> Vec<DesignRow> {
        (0..n_rows)
            .map(|i| DesignRow {
                x: vec![],
                y: vec![],
                bin_index: i,
                observed: (i < n_sp) as u32,
            })
            .collect()
    }

    #[test]
    fn initialize_examples() {
        let p = initialize(&bias_rows(10_000, 50), 0.001).unwrap();
        assert!((p.mu - 5f64.ln()).abs() < 1e-14);
        let p = initialize(&bias_rows(10_000, 10), 0.001).unwrap();
        assert!(p.mu.abs() < 1e-14);
        assert!(matches!(
            initialize(&bias_rows(100, 0), 0.001),
            Err(GlmError::InsufficientData(_))
        ));
    }

    #[test]
    fn bias_only_newton_converges_fast() {
        let rows = bias_rows(10_000, 50);
        let delta = 0.001;
        let target = 5f64.ln();
        let mut p = GlmParams::zeros(0, 0);
        let opts = FitOptions::default();
        let mut steps = 0;
        while (p.mu - target).abs() > 1e-10 {
            p = newton_step(&p, &rows, delta, &opts).unwrap().0;
            steps += 1;
            assert!(steps <= 6, "took more than 6 steps");
        }
    }

    #[test]
    fn stationary_point_is_fixed() {
        let rows = bias_rows(10_000, 50);
        let p = GlmParams { mu: 5f64.ln(), ..GlmParams::zeros(0, 0) };
        let (q, diag) = newton_step(&p, &rows, 0.001, &FitOptions::default()).unwrap();
        assert_eq!(q, p);
        assert_eq!(diag.alpha, 0.0);
    }

    fn random_design(seed: u64) -> (Vec<DesignRow>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3000;
        let delta = 0.001;
        let stim = Stimulus::scalar((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), delta).unwrap();
        let counts = (0..n).map(|_| (rng.random::<f64>() < 0.05) as u32).collect();
        let spikes = SpikeTrain::new(counts, delta).unwrap();
        (assemble_design(&stim, &spikes, &LagConfig::new(4, 3).unwrap()).unwrap(), delta)
    }

    #[test]
    fn accepted_step_increases_loglik() {
        let (rows, delta) = random_design(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GlmParams {
            k: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            h: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            mu: 5.0,
        };
        let before = log_likelihood(&p, &rows, delta).unwrap();
        let (q, diag) = newton_step(&p, &rows, delta, &FitOptions::default()).unwrap();
        let after = log_likelihood(&q, &rows, delta).unwrap();
        assert!(after > before);
        assert_eq!(after, diag.loglik_after);
    }

    #[test]
    fn fit_converges_with_monotone_trace() {
        let (rows, delta) = random_design(3);
        let res = fit(&rows, delta, &FitOptions::default()).unwrap();
        assert!(res.converged, "{:?}", res.warnings);
        assert!(res.trace.last().unwrap().grad_max_norm < 1e-8);
        for w in res.trace.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - ROUNDING_FLOOR * (1.0 + w[0].loglik.abs()));
        }
        let again = fit(&rows, delta, &FitOptions::default()).unwrap();
        assert_eq!(again, res);
    }

    #[test]
    fn bias_only_fit_matches_closed_form() {
        let rows = bias_rows(5000, 37);
        let res = fit(&rows, 0.002, &FitOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.params.mu - (37.0f64 / (0.002 * 5000.0)).ln()).abs() < 1e-10);
    }

    #[test]
    fn max_iters_reports_nonconvergence() {
        let (rows, delta) = random_design(4);
        let opts = FitOptions { max_iters: 1, ..FitOptions::default() };
        let init = GlmParams { mu: -3.0, ..GlmParams::zeros(4, 3) };
        let res = fit_from(&rows, delta, &init, &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.warnings.iter().any(|w| w.contains("max_iters")));
    }

    #[test]
    fn singular_hessian_is_damped() {
        // duplicated regressor column makes -H singular
        let rows: Vec<DesignRow> = (0..500)
            .map(|i| {
                let v = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
                DesignRow { x: vec![v, v], y: vec![0.0], bin_index: i, observed: (i % 9 == 0) as u32 }
            })
            .collect();
        let res = fit(&rows, 0.01, &FitOptions::default()).unwrap();
        assert!(res.params.is_finite());
        assert!((res.params.k[0] - res.params.k[1]).abs() < 1e-6);
    }

    #[test]
    fn failed_factorization_escalates_ridge() {
        let h = DMatrix::zeros(2, 2);
        let g = DVector::from_vec(vec![1.0, -2.0]);
        let (d, eps) = newton_direction(&h, &g, 1e-6).unwrap();
        assert_eq!(eps, 1e-6);
        assert!((d[0] - 1e6).abs() < 1e-6 && (d[1] + 2e6).abs() < 1e-6);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let (_, eps) = newton_direction(&indefinite, &g, 1e-6).unwrap();
        assert!(eps > 1.0);
    }

    #[test]
    fn rejects_bad_options_and_data() {
        let (rows, delta) = random_design(5);
        let bad = FitOptions { grad_tol: 0.0, ..FitOptions::default() };
        assert!(fit(&rows, delta, &bad).is_err());
        assert!(matches!(fit(&bias_rows(10, 0), 0.1, &FitOptions::default()), Err(GlmError::InsufficientData(_))));
        let empty: Vec<DesignRow> = vec![];
        assert!(fit(&empty, 0.1, &FitOptions::default()).is_err());
    }
}
