//! Space-time separable receptive fields, `K[i][l] = s_i * t_l`.
//!
//! The intensity is `exp(s^T X t + h . y + mu)` where `X` is the
//! `(locations x tau_k)` stimulus lag block of a bin. The model is bilinear
//! in `(s, t)`, so the likelihood is not concave jointly; with either factor
//! frozen it is an ordinary GLM with regressor `X t` (for `s`) or `s^T X`
//! (for `t`). [`fit_separable`] alternates exact block maximizations of those
//! two concave subproblems.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::max_abs;
use crate::design::{LagConfig, Regressors, RowVisitor, SpikeTrain, Stimulus};
use crate::error::{GlmError, Result};
use crate::kernel::{clamp_predictor, dot};
use crate::likelihood::{GlmParams, Intensity};
use crate::optimizer::{self, FitOptions, FitResult, GlmObjective, TraceEntry};
use crate::simulator::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparableParams {
    pub s_filter: Vec<f64>,
    pub t_filter: Vec<f64>,
    pub h: Vec<f64>,
    pub mu: f64,
}

impl SeparableParams {
    /// Full receptive field, location-major: entry `i * tau_k + l` is
    /// `s_i * t_l`.
    pub fn kernel(&self) -> Vec<f64> {
        self.s_filter
            .iter()
            .flat_map(|&s| self.t_filter.iter().map(move |&t| s * t))
            .collect()
    }

    /// The equivalent unconstrained single-neuron parameters.
    pub fn to_full(&self) -> GlmParams {
        GlmParams { k: self.kernel(), h: self.h.clone(), mu: self.mu }
    }

    /// Unit-norm spatial filter whose first nonzero entry is positive.
    pub fn is_canonical(&self) -> bool {
        let norm = l2(&self.s_filter);
        (norm - 1.0).abs() <= 1e-12 && first_nonzero(&self.s_filter).is_some_and(|v| v > 0.0)
    }

    pub fn canonicalized(&self) -> Result<Self> {
        let (s, t) = canonicalize(&self.s_filter, &self.t_filter)?;
        Ok(Self { s_filter: s, t_filter: t, ..self.clone() })
    }

    /// Flattens to `[s | t | h | mu]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.s_filter.clone();
        v.extend_from_slice(&self.t_filter);
        v.extend_from_slice(&self.h);
        v.push(self.mu);
        v
    }

    pub fn from_flat(flat: &[f64], locations: usize, tau_k: usize, tau_h: usize) -> Result<Self> {
        if flat.len() != locations + tau_k + tau_h + 1 {
            return Err(GlmError::DimensionMismatch {
                what: "flat separable parameters",
                expected: locations + tau_k + tau_h + 1,
                got: flat.len(),
            });
        }
        let (s, rest) = flat.split_at(locations);
        let (t, rest) = rest.split_at(tau_k);
        let (h, mu) = rest.split_at(tau_h);
        Ok(Self { s_filter: s.to_vec(), t_filter: t.to_vec(), h: h.to_vec(), mu: mu[0] })
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn first_nonzero(v: &[f64]) -> Option<f64> {
    v.iter().copied().find(|&x| x != 0.0)
}

/// Resolves the `(a s, t / a)` degeneracy: returns `(sigma s / |s|, |s| t / sigma)`
/// with `sigma` the sign of the first nonzero entry of `s`.
pub fn canonicalize(s_filter: &[f64], t_filter: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let norm = l2(s_filter);
    let first = first_nonzero(s_filter);
    let Some(first) = first.filter(|_| norm.is_finite() && norm > 0.0) else {
        return Err(GlmError::DegenerateFilter("spatial filter is zero or non-finite".into()));
    };
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON && first > 0.0 {
        return Ok((s_filter.to_vec(), t_filter.to_vec()));
    }
    let sigma = first.signum();
    Ok((
        s_filter.iter().map(|v| sigma * v / norm).collect(),
        t_filter.iter().map(|v| norm * v / sigma).collect(),
    ))
}

/// Lagged stimulus blocks and spike histories for every usable bin,
/// borrowed from the underlying series.
#[derive(Debug, Clone)]
pub struct SpatioTemporalDesign<'a> {
    stimulus: &'a Stimulus,
    spikes: &'a SpikeTrain,
    counts: Vec<f64>,
    cfg: LagConfig,
}

/// One bin's `(locations x tau_k)` stimulus block with its history.
#[derive(Debug, Clone, Copy)]
pub struct SpatioTemporalRow<'a> {
    stimulus: &'a Stimulus,
    tau_k: usize,
    pub bin_index: usize,
    pub y: &'a [f64],
    pub observed: u32,
}

impl<'a> SpatioTemporalRow<'a> {
    pub fn num_locations(&self) -> usize {
        self.stimulus.num_locations()
    }

    pub fn tau_k(&self) -> usize {
        self.tau_k
    }

    /// Oldest-first stimulus lags at one location.
    pub fn x_block(&self, loc: usize) -> &'a [f64] {
        &self.stimulus.location(loc)[self.bin_index - self.tau_k..self.bin_index]
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_locations(), self.tau_k, |i, l| self.x_block(i)[l])
    }
}

impl<'a> SpatioTemporalDesign<'a> {
    pub fn new(stimulus: &'a Stimulus, spikes: &'a SpikeTrain, cfg: &LagConfig) -> Result<Self> {
        if stimulus.num_bins() != spikes.num_bins() {
            return Err(GlmError::LengthMismatch {
                what: "stimulus bins vs spike bins",
                left: stimulus.num_bins(),
                right: spikes.num_bins(),
            });
        }
        if stimulus.delta() != spikes.delta() {
            return Err(GlmError::DeltaMismatch { left: stimulus.delta(), right: spikes.delta() });
        }
        cfg.validate_for(spikes.num_bins())?;
        Ok(Self { stimulus, spikes, counts: spikes.counts_f64(), cfg: *cfg })
    }

    pub fn len(&self) -> usize {
        self.spikes.num_bins() - self.cfg.burn_in()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_locations(&self) -> usize {
        self.stimulus.num_locations()
    }

    pub fn lags(&self) -> LagConfig {
        self.cfg
    }

    pub fn delta(&self) -> f64 {
        self.spikes.delta()
    }

    pub fn total_spikes(&self) -> u64 {
        self.spikes.counts()[self.cfg.burn_in()..].iter().map(|&c| c as u64).sum()
    }

    pub fn row(&self, idx: usize) -> SpatioTemporalRow<'_> {
        let t = self.cfg.burn_in() + idx;
        SpatioTemporalRow {
            stimulus: self.stimulus,
            tau_k: self.cfg.tau_k,
            bin_index: t,
            y: &self.counts[t - self.cfg.tau_h..t],
            observed: self.spikes.counts()[t],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = SpatioTemporalRow<'_>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }
}

fn check_params(params: &SeparableParams, locations: usize, tau_k: usize, tau_h: usize) -> Result<()> {
    if params.s_filter.len() != locations {
        return Err(GlmError::DimensionMismatch { what: "spatial filter", expected: locations, got: params.s_filter.len() });
    }
    if params.t_filter.len() != tau_k {
        return Err(GlmError::DimensionMismatch { what: "temporal filter", expected: tau_k, got: params.t_filter.len() });
    }
    if params.h.len() != tau_h {
        return Err(GlmError::DimensionMismatch { what: "post-spike filter", expected: tau_h, got: params.h.len() });
    }
    Ok(())
}

fn check_design(params: &SeparableParams, design: &SpatioTemporalDesign<'_>) -> Result<()> {
    if design.is_empty() {
        return Err(GlmError::InsufficientData("design has no usable bins".into()));
    }
    let cfg = design.lags();
    check_params(params, design.num_locations(), cfg.tau_k, cfg.tau_h)
}

/// `exp(s^T X t + h . y + mu)`.
pub fn separable_intensity(params: &SeparableParams, row: &SpatioTemporalRow<'_>) -> Result<Intensity> {
    check_params(params, row.num_locations(), row.tau_k(), row.y.len())?;
    let mut eta = params.mu + dot(&params.h, row.y);
    for (loc, &s) in params.s_filter.iter().enumerate() {
        eta += s * dot(row.x_block(loc), &params.t_filter);
    }
    Ok(Intensity::from_predictor(eta))
}

struct JointEval {
    loglik: f64,
    gradient: Vec<f64>,
    hessian: Option<DMatrix<f64>>,
    /// Mixed `d^2 L / ds dt`, present with the Hessian.
    cross: Option<DMatrix<f64>>,
    clamped: usize,
}

fn evaluate_joint(
    params: &SeparableParams,
    design: &SpatioTemporalDesign<'_>,
    delta: f64,
    want_gradient: bool,
    want_hessian: bool,
) -> Result<JointEval> {
    check_design(params, design)?;
    let ns = params.s_filter.len();
    let nt = params.t_filter.len();
    let nh = params.h.len();
    let p = ns + nt + nh + 1;
    let mut spike_sum = 0.0;
    let mut rate_sum = 0.0;
    let mut clamped = 0;
    let mut grad = vec![0.0; p];
    let mut hess = DMatrix::<f64>::zeros(if want_hessian { p } else { 0 }, if want_hessian { p } else { 0 });
    let mut cross = DMatrix::<f64>::zeros(if want_hessian { ns } else { 0 }, if want_hessian { nt } else { 0 });
    let mut z = vec![0.0; p];

    for row in design.rows() {
        // z = [X t | s^T X | y | 1]
        z[ns..ns + nt].iter_mut().for_each(|v| *v = 0.0);
        for loc in 0..ns {
            let xb = row.x_block(loc);
            z[loc] = dot(xb, &params.t_filter);
            let s = params.s_filter[loc];
            for (acc, &x) in z[ns..ns + nt].iter_mut().zip(xb) {
                *acc += s * x;
            }
        }
        z[ns + nt..ns + nt + nh].copy_from_slice(row.y);
        z[p - 1] = 1.0;
        let eta = dot(&params.s_filter, &z[..ns]) + dot(&params.h, row.y) + params.mu;
        let (eta, was_clamped) = clamp_predictor(eta);
        clamped += was_clamped as usize;
        let rate = eta.exp();
        let obs = row.observed as f64;
        if obs > 0.0 {
            spike_sum += obs * eta;
        }
        rate_sum += rate;
        if !(want_gradient || want_hessian) {
            continue;
        }
        let resid = obs - delta * rate;
        for (g, &zi) in grad.iter_mut().zip(&z) {
            *g += resid * zi;
        }
        if want_hessian {
            let w = delta * rate;
            for a in 0..p {
                let wa = w * z[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..p {
                    hess[(a, b)] -= wa * z[b];
                }
            }
            for loc in 0..ns {
                let xb = row.x_block(loc);
                for l in 0..nt {
                    cross[(loc, l)] += resid * xb[l];
                }
            }
        }
    }

    let (hessian, cross) = if want_hessian {
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        // cross block = sum resid X - delta sum lambda (X t)(s^T X)^T
        let mut block = cross;
        for loc in 0..ns {
            for l in 0..nt {
                block[(loc, l)] += hess[(loc, ns + l)];
                hess[(loc, ns + l)] = block[(loc, l)];
                hess[(ns + l, loc)] = block[(loc, l)];
            }
        }
        (Some(hess), Some(block))
    } else {
        (None, None)
    };

    Ok(JointEval {
        loglik: spike_sum - delta * rate_sum,
        gradient: grad,
        hessian,
        cross,
        clamped,
    })
}

pub fn separable_log_likelihood(params: &SeparableParams, design: &SpatioTemporalDesign<'_>, delta: f64) -> Result<f64> {
    Ok(evaluate_joint(params, design, delta, false, false)?.loglik)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableGradient {
    pub d_s: Vec<f64>,
    pub d_t: Vec<f64>,
    pub d_h: Vec<f64>,
    pub d_mu: f64,
}

impl SeparableGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.d_s.clone();
        v.extend_from_slice(&self.d_t);
        v.extend_from_slice(&self.d_h);
        v.push(self.d_mu);
        v
    }

    pub fn max_norm(&self) -> f64 {
        max_abs(&self.to_flat())
    }
}

/// Gradient over `(s, t, h, mu)`: the single-neuron formulas with regressor
/// `X t` for `s` and `s^T X` for `t`.
pub fn separable_gradients(
    params: &SeparableParams,
    design: &SpatioTemporalDesign<'_>,
    delta: f64,
) -> Result<SeparableGradient> {
    let g = evaluate_joint(params, design, delta, true, false)?.gradient;
    let (ns, nt, nh) = (params.s_filter.len(), params.t_filter.len(), params.h.len());
    Ok(SeparableGradient {
        d_s: g[..ns].to_vec(),
        d_t: g[ns..ns + nt].to_vec(),
        d_h: g[ns + nt..ns + nt + nh].to_vec(),
        d_mu: g[ns + nt + nh],
    })
}

/// Mixed derivative `d^2 L / ds_i dt_l`
/// `= sum_t (y_t - delta lambda_t) X_il - delta sum_t lambda_t (X t)_i (s^T X)_l`.
pub fn cross_hessian_st(params: &SeparableParams, design: &SpatioTemporalDesign<'_>, delta: f64) -> Result<DMatrix<f64>> {
    Ok(evaluate_joint(params, design, delta, true, true)?.cross.expect("requested"))
}

/// Joint Hessian over `[s | t | h | mu]`, for diagnostics; it is not
/// negative semidefinite in general.
pub fn separable_hessian(params: &SeparableParams, design: &SpatioTemporalDesign<'_>, delta: f64) -> Result<DMatrix<f64>> {
    Ok(evaluate_joint(params, design, delta, true, true)?.hessian.expect("requested"))
}

/// Per-row reduced stimulus regressor for one block of the alternation.
struct ReducedRows<'d, 'a> {
    design: &'d SpatioTemporalDesign<'a>,
    values: Vec<f64>,
    width: usize,
}

impl<'d, 'a> ReducedRows<'d, 'a> {
    /// Regressor `X t`, one entry per location.
    fn spatial(design: &'d SpatioTemporalDesign<'a>, t_filter: &[f64]) -> Self {
        let width = design.num_locations();
        let mut values = Vec::with_capacity(design.len() * width);
        for row in design.rows() {
            values.extend((0..width).map(|loc| dot(row.x_block(loc), t_filter)));
        }
        Self { design, values, width }
    }

    /// Regressor `s^T X`, one entry per lag.
    fn temporal(design: &'d SpatioTemporalDesign<'a>, s_filter: &[f64]) -> Self {
        let width = design.lags().tau_k;
        let mut values = vec![0.0; design.len() * width];
        for (row, out) in design.rows().zip(values.chunks_mut(width)) {
            for (loc, &s) in s_filter.iter().enumerate() {
                for (acc, &x) in out.iter_mut().zip(row.x_block(loc)) {
                    *acc += s * x;
                }
            }
        }
        Self { design, values, width }
    }
}

impl Regressors for ReducedRows<'_, '_> {
    fn stimulus_len(&self) -> usize {
        self.width
    }

    fn history_len(&self) -> usize {
        self.design.lags().tau_h
    }

    fn num_rows(&self) -> usize {
        self.design.len()
    }

    fn for_each_row(&self, f: &mut RowVisitor<'_>) {
        for (row, x) in self.design.rows().zip(self.values.chunks(self.width.max(1))) {
            f(&x[..self.width], row.y, row.observed);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparableOptions {
    /// Tolerances for the joint gradient; `max_iters` bounds the number of
    /// alternation sweeps and each block's Newton iterations.
    pub fit: FitOptions,
    /// Number of starts; start 0 is the spike-triggered-average
    /// initialization, later starts perturb it.
    pub starts: usize,
    /// Perturbation scale relative to each factor's RMS entry.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SeparableOptions {
    fn default() -> Self {
        Self { fit: FitOptions::default(), starts: 3, perturbation: 0.5, seed: 0 }
    }
}

const POWER_ITERATIONS: usize = 50;
const POWER_TOL: f64 = 1e-10;

/// Dominant singular triplet `(u, sigma, v)` by alternating power iteration.
fn rank_one(m: &DMatrix<f64>) -> (DVector<f64>, f64, DVector<f64>) {
    let mut v = DVector::from_element(m.ncols(), 1.0 / (m.ncols() as f64).sqrt());
    let mut u = DVector::zeros(m.nrows());
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        u = m * &v;
        let nu = u.norm();
        if nu == 0.0 {
            return (u, 0.0, v);
        }
        u /= nu;
        let mut next = m.transpose() * &u;
        sigma = next.norm();
        next /= sigma;
        let change = (&next - &v).amax();
        v = next;
        if change < POWER_TOL {
            break;
        }
    }
    (u, sigma, v)
}

/// Spike-triggered-average start: the STA block's dominant rank-1 factor
/// split evenly between `s` and `t`, `h = 0`, and the closed-form bias.
pub fn initialize_separable(design: &SpatioTemporalDesign<'_>, delta: f64) -> Result<SeparableParams> {
    let n_sp = design.total_spikes();
    if design.is_empty() || n_sp == 0 {
        return Err(GlmError::InsufficientData("no spikes in the usable bins".into()));
    }
    let cfg = design.lags();
    let mut sta = DMatrix::<f64>::zeros(design.num_locations(), cfg.tau_k);
    for row in design.rows().filter(|r| r.observed > 0) {
        let w = row.observed as f64;
        for loc in 0..design.num_locations() {
            for (l, &x) in row.x_block(loc).iter().enumerate() {
                sta[(loc, l)] += w * x;
            }
        }
    }
    sta /= n_sp as f64;
    let (u, sigma, v) = rank_one(&sta);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(GlmError::DegenerateFilter("spike-triggered average is zero".into()));
    }
    let scale = sigma.sqrt();
    Ok(SeparableParams {
        s_filter: u.iter().map(|x| x * scale).collect(),
        t_filter: v.iter().map(|x| x * scale).collect(),
        h: vec![0.0; cfg.tau_h],
        mu: (n_sp as f64 / (delta * design.len() as f64)).ln(),
    })
}

fn perturbed_start(base: &SeparableParams, start: usize, options: &SeparableOptions) -> SeparableParams {
    if start == 0 {
        return base.clone();
    }
    let mut rng = stream_rng(options.seed, start as u64);
    let mut jitter = |v: &[f64]| -> Vec<f64> {
        let rms = l2(v) / (v.len() as f64).sqrt();
        v.iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + options.perturbation * rms * z
            })
            .collect()
    };
    let s_filter = jitter(&base.s_filter);
    let t_filter = jitter(&base.t_filter);
    SeparableParams { s_filter, t_filter, ..base.clone() }
}

/// Alternating block ascent from `init`; the result is canonicalized.
pub fn fit_separable_from(
    design: &SpatioTemporalDesign<'_>,
    delta: f64,
    init: &SeparableParams,
    options: &FitOptions,
) -> Result<FitResult<SeparableParams>> {
    options.validate()?;
    check_design(init, design)?;
    if design.total_spikes() == 0 {
        return Err(GlmError::InsufficientData("no spikes in the usable bins".into()));
    }
    let ns = design.num_locations();
    let cfg = design.lags();
    let mut params = init.clone();
    let mut warnings = Vec::new();
    let at = evaluate_joint(&params, design, delta, true, false)?;
    let mut grad_norm = max_abs(&at.gradient);
    let mut loglik = at.loglik;
    let mut clamped = at.clamped;
    let mut trace = vec![TraceEntry { loglik, grad_max_norm: grad_norm }];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if grad_norm < options.grad_tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iters {
            warnings.push(format!(
                "reached max_iters={} sweeps with joint gradient max-norm {grad_norm:e}",
                options.max_iters
            ));
            break;
        }
        let before = params.to_flat();

        let spatial = ReducedRows::spatial(design, &params.t_filter);
        let init_s = GlmParams { k: params.s_filter.clone(), h: params.h.clone(), mu: params.mu };
        let block = optimizer::maximize(&GlmObjective::new(&spatial, delta), &init_s.to_flat(), options)?;
        note_block(&mut warnings, "spatial", iterations, &block);
        let s_block = GlmParams::from_flat(&block.theta, ns, cfg.tau_h)?;
        params.s_filter = s_block.k;
        params.h = s_block.h;
        params.mu = s_block.mu;
        drop(spatial);

        let temporal = ReducedRows::temporal(design, &params.s_filter);
        let init_t = GlmParams { k: params.t_filter.clone(), h: params.h.clone(), mu: params.mu };
        let block = optimizer::maximize(&GlmObjective::new(&temporal, delta), &init_t.to_flat(), options)?;
        note_block(&mut warnings, "temporal", iterations, &block);
        let t_block = GlmParams::from_flat(&block.theta, cfg.tau_k, cfg.tau_h)?;
        params.t_filter = t_block.k;
        params.h = t_block.h;
        params.mu = t_block.mu;
        drop(temporal);

        iterations += 1;
        let at = evaluate_joint(&params, design, delta, true, false)?;
        grad_norm = max_abs(&at.gradient);
        loglik = at.loglik;
        clamped = clamped.max(at.clamped);
        trace.push(TraceEntry { loglik, grad_max_norm: grad_norm });
        let moved = before
            .iter()
            .zip(params.to_flat())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if moved < options.step_tol {
            converged = grad_norm < options.grad_tol;
            if !converged {
                warnings.push(format!(
                    "sweep moved parameters by {moved:e} with joint gradient max-norm {grad_norm:e}"
                ));
            }
            break;
        }
    }
    if clamped > 0 {
        warnings.push(format!("linear predictor clamped in up to {clamped} bins"));
    }
    let params = params.canonicalized()?;
    Ok(FitResult { params, final_loglik: loglik, iterations, converged, trace, warnings })
}

fn note_block(warnings: &mut Vec<String>, name: &str, sweep: usize, block: &optimizer::FlatFit) {
    if !block.converged {
        warnings.push(format!("sweep {sweep}: {name} block did not converge"));
    }
    for w in &block.warnings {
        warnings.push(format!("sweep {sweep}: {name} block: {w}"));
    }
}

/// Multi-start alternating fit from the spike-triggered-average start.
///
/// Starts run concurrently; the best final log-likelihood wins, ties going to
/// the lowest start index.
pub fn fit_separable(
    design: &SpatioTemporalDesign<'_>,
    delta: f64,
    options: &SeparableOptions,
) -> Result<FitResult<SeparableParams>> {
    if options.starts == 0 || !(options.perturbation >= 0.0 && options.perturbation.is_finite()) {
        return Err(GlmError::InvalidInput(format!(
            "need at least one start and a finite nonnegative perturbation: {options:?}"
        )));
    }
    let base = initialize_separable(design, delta)?;
    let runs: Vec<Result<FitResult<SeparableParams>>> = (0..options.starts)
        .into_par_iter()
        .map(|start| fit_separable_from(design, delta, &perturbed_start(&base, start, options), &options.fit))
        .collect();

    let mut best: Option<(usize, FitResult<SeparableParams>)> = None;
    let mut first_error = None;
    let mut notes = Vec::new();
    for (start, run) in runs.into_iter().enumerate() {
        match run {
            Ok(fit) => {
                notes.push(format!("start {start}: loglik {} converged={}", fit.final_loglik, fit.converged));
                let better = best.as_ref().is_none_or(|(_, b)| fit.final_loglik > b.final_loglik);
                if better {
                    best = Some((start, fit));
                }
            }
            Err(e) => {
                notes.push(format!("start {start} failed: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((start, mut fit)) => {
            if options.starts > 1 {
                fit.warnings.extend(notes);
                fit.warnings.push(format!("selected start {start}"));
            }
            Ok(fit)
        }
        None => Err(first_error.expect("at least one start")),
    }
}
