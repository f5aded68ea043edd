//! Command-line workflows: `simulate`, `fit`, `check-grad` and `recover`.
//!
//! Exit status: 0 success, 1 usage error, 2 data or configuration error,
//! 3 non-convergence (including a recovery below its threshold).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calculus::{self, central_difference, GradientCheckReport};
use crate::design::{assemble_design, SpikeTrain, Stimulus};
use crate::error::{GlmError, Result};
use crate::io::{self, ExperimentConfig, FitReport, ModelKind, ModelParams};
use crate::network::{fit_population, NeuronParams, PopulationData, PopulationDesign};
use crate::optimizer;
use crate::separable::{self, SeparableOptions, SpatioTemporalDesign};
use crate::simulator::{generate_stimulus, simulate_population, simulate_spike_train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Largest acceptable finite-difference relative error for `check-grad`.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Central-difference step used by `check-grad`.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "spikeglm", version, about = "Fit and simulate point-process GLMs of spiking neurons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a stimulus and spike trains from the configured ground truth.
    Simulate(CommonArgs),
    /// Fit the configured model to stimulus and spike files and write a report.
    Fit(CommonArgs),
    /// Compare analytic derivatives with finite differences on simulated data.
    CheckGrad(CommonArgs),
    /// Simulate, fit, and compare the fit with the ground truth.
    Recover(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for data and report files, instead of the config's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the model kind.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
}

enum Failure {
    Data(GlmError),
    NotConverged(String),
}

impl From<GlmError> for Failure {
    fn from(e: GlmError) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Loaded configuration plus the directory its relative paths resolve from.
struct Context {
    config: ExperimentConfig,
    base: PathBuf,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self> {
        let mut config = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.simulation.seed = seed;
        }
        if let Some(model) = args.model {
            config.model = model;
        }
        config.validate()?;
        let base = match &args.out {
            Some(dir) => dir.clone(),
            None => args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Ok(Self { config, base })
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        self.base.join(path)
    }

    fn stimulus_path(&self) -> PathBuf {
        self.resolve(&self.config.paths.stimulus)
    }

    fn spike_paths(&self) -> Vec<PathBuf> {
        let c = &self.config;
        c.paths
            .spike_paths(c.model, c.simulation.num_neurons)
            .iter()
            .map(|p| self.resolve(p))
            .collect()
    }
}

/// Runs one command with process stdout and stderr and returns the exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

type Handler = fn(&Context, &mut dyn Write) -> Outcome;

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (args, run): (&CommonArgs, Handler) = match &cli.command {
        Command::Simulate(a) => (a, simulate),
        Command::Fit(a) => (a, fit),
        Command::CheckGrad(a) => (a, check_grad),
        Command::Recover(a) => (a, recover),
    };
    let outcome = Context::load(args).map_err(Failure::Data).and_then(|ctx| run(&ctx, out));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
        Err(Failure::NotConverged(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_NOT_CONVERGED
        }
    }
}

fn write_out(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|source| GlmError::Io { path: "<stdout>".into(), source })
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        write_out($out, format_args!($($arg)*))
    };
}

/// Simulated stimulus and spike trains for the configured ground truth.
struct Simulated {
    truth: ModelParams,
    stimulus: Stimulus,
    trains: Vec<SpikeTrain>,
}

fn simulate_truth(config: &ExperimentConfig) -> Result<Simulated> {
    let truth = config.truth_params()?;
    let sim = config.sim_config();
    let stimulus = generate_stimulus(&sim, config.num_locations())?;
    let trains = match &truth {
        ModelParams::Single(p) => vec![simulate_spike_train(p, &stimulus, &sim)?],
        ModelParams::Separable(p) => vec![simulate_spike_train(&p.to_full(), &stimulus, &sim)?],
        ModelParams::Network(ps) => simulate_population(ps, &stimulus, &sim)?.trains().to_vec(),
    };
    Ok(Simulated { truth, stimulus, trains })
}

fn simulate(ctx: &Context, out: &mut dyn Write) -> Outcome {
    let data = simulate_truth(&ctx.config)?;
    let stim_path = ctx.stimulus_path();
    io::save_stimulus(&data.stimulus, &stim_path)?;
    say!(
        out,
        "stimulus: {} bins x {} locations -> {}",
        data.stimulus.num_bins(),
        data.stimulus.num_locations(),
        stim_path.display()
    )?;
    for (i, (train, path)) in data.trains.iter().zip(ctx.spike_paths()).enumerate() {
        io::save_spike_train(train, &path)?;
        say!(out, "neuron {i}: {} spikes -> {}", train.total_spikes(), path.display())?;
    }
    Ok(())
}

fn fit_data(config: &ExperimentConfig, stimulus: &Stimulus, trains: &[SpikeTrain]) -> Result<FitReport> {
    let lags = &config.lags;
    match config.model {
        ModelKind::Single => {
            let rows = assemble_design(stimulus, single_train(trains)?, lags)?;
            Ok(FitReport::single(optimizer::fit(&rows, config.delta, &config.fit)?, config))
        }
        ModelKind::Separable => {
            let design = SpatioTemporalDesign::new(stimulus, single_train(trains)?, lags)?;
            let options = SeparableOptions {
                fit: config.fit,
                starts: config.separable.starts,
                perturbation: config.separable.perturbation,
                seed: config.simulation.seed,
            };
            Ok(FitReport::separable(separable::fit_separable(&design, config.delta, &options)?, config))
        }
        ModelKind::Network => {
            let data = PopulationData::new(stimulus.clone(), trains.to_vec())?;
            let fits = fit_population(&data, lags, &config.fit)?
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.map_err(|e| GlmError::InvalidInput(format!("neuron {i}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(FitReport::network(fits, config))
        }
    }
}

fn single_train(trains: &[SpikeTrain]) -> Result<&SpikeTrain> {
    match trains {
        [one] => Ok(one),
        _ => Err(GlmError::InvalidInput(format!("expected one spike train, got {}", trains.len()))),
    }
}

fn check_delta(config: &ExperimentConfig, stimulus: &Stimulus) -> Result<()> {
    if stimulus.delta() != config.delta {
        return Err(GlmError::DeltaMismatch { left: config.delta, right: stimulus.delta() });
    }
    Ok(())
}

fn fit(ctx: &Context, out: &mut dyn Write) -> Outcome {
    let config = &ctx.config;
    let stimulus = io::load_stimulus(ctx.stimulus_path())?;
    check_delta(config, &stimulus)?;
    let trains = ctx
        .spike_paths()
        .iter()
        .map(io::load_spike_train)
        .collect::<Result<Vec<_>>>()?;
    let report = fit_data(config, &stimulus, &trains)?;
    let path = ctx.resolve(&config.paths.report);
    io::save_fit_report(&report, &path)?;
    say!(
        out,
        "model={} converged={} iterations={} loglik={}",
        report.model,
        report.converged,
        report.iterations,
        report.final_loglik
    )?;
    say!(out, "report -> {}", path.display())?;
    if report.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "fit did not converge: {}",
            report.warnings.last().map_or("no diagnostic", String::as_str)
        )))
    }
}

fn check_grad(ctx: &Context, out: &mut dyn Write) -> Outcome {
    let config = &ctx.config;
    let data = simulate_truth(config)?;
    let delta = config.delta;
    let (gradient, hessian) = match &data.truth {
        ModelParams::Single(p) => {
            let rows = assemble_design(&data.stimulus, &data.trains[0], &config.lags)?;
            let g = calculus::check_gradient_fd(p, &rows, delta, FD_STEP)?;
            let h = calculus::check_hessian_fd(p, &rows, delta, FD_STEP)?;
            (g, h.max_relative_error)
        }
        ModelParams::Separable(p) => {
            let design = SpatioTemporalDesign::new(&data.stimulus, &data.trains[0], &config.lags)?;
            let dims = (p.s_filter.len(), p.t_filter.len(), p.h.len());
            let unflatten = |flat: &[f64]| separable::SeparableParams::from_flat(flat, dims.0, dims.1, dims.2);
            let analytic = separable::separable_gradients(p, &design, delta)?.to_flat();
            let (numeric, flags) = central_difference(
                |flat| {
                    let q = unflatten(flat).expect("dimensions fixed");
                    (separable::separable_log_likelihood(&q, &design, delta).expect("checked"), false)
                },
                &p.to_flat(),
                FD_STEP,
            );
            let analytic_h = separable::separable_hessian(p, &design, delta)?;
            let numeric_h = calculus::hessian_by_differences(
                |flat| {
                    let q = unflatten(flat).expect("dimensions fixed");
                    separable::separable_gradients(&q, &design, delta).expect("checked").to_flat()
                },
                &p.to_flat(),
                FD_STEP,
            );
            (
                GradientCheckReport::from_parts(analytic, numeric, flags),
                calculus::max_matrix_relative_error(&analytic_h, &numeric_h),
            )
        }
        ModelParams::Network(ps) => {
            let population = PopulationData::new(data.stimulus.clone(), data.trains.clone())?;
            let design = PopulationDesign::new(&population, &config.lags)?;
            let mut worst: Option<GradientCheckReport> = None;
            let mut worst_h = 0.0f64;
            for (i, p) in ps.iter().enumerate() {
                let rows = design.neuron(i)?;
                let g = calculus::check_gradient_fd(&p.to_glm(), &rows, delta, FD_STEP)?;
                let h = calculus::check_hessian_fd(&p.to_glm(), &rows, delta, FD_STEP)?;
                worst_h = worst_h.max(h.max_relative_error);
                if worst.as_ref().is_none_or(|w| g.max_relative_error > w.max_relative_error) {
                    worst = Some(g);
                }
            }
            (worst.expect("at least one neuron"), worst_h)
        }
    };
    say!(out, "model={} parameters={}", config.model, gradient.analytic.len())?;
    say!(out, "max gradient relative error: {:.3e}", gradient.max_relative_error)?;
    say!(out, "max hessian relative error: {:.3e}", hessian)?;
    if !gradient.unreliable.is_empty() {
        say!(out, "warning: some coordinates crossed the predictor clamp")?;
    }
    if gradient.max_relative_error > GRADIENT_TOLERANCE || gradient.max_relative_error.is_nan() {
        return Err(Failure::Data(GlmError::InvalidInput(format!(
            "gradient check failed: {:e} > {GRADIENT_TOLERANCE:e}",
            gradient.max_relative_error
        ))));
    }
    Ok(())
}

/// Pearson correlation of two equal-length vectors; NaN when either is
/// constant.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlation needs equal lengths");
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// `||estimate - truth||_F / ||truth||_F`.
pub fn relative_frobenius_error(truth: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(truth.len(), estimate.len(), "error needs equal lengths");
    let diff: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2)).sum();
    let norm: f64 = truth.iter().map(|t| t * t).sum();
    (diff / norm).sqrt()
}

fn filters(p: &NeuronParams) -> Vec<f64> {
    let mut v = p.k.clone();
    p.h_couplings.iter().for_each(|c| v.extend_from_slice(c));
    v
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    [a, b].concat()
}

fn recover(ctx: &Context, out: &mut dyn Write) -> Outcome {
    let config = &ctx.config;
    let data = simulate_truth(config)?;
    let spikes: Vec<u64> = data.trains.iter().map(SpikeTrain::total_spikes).collect();
    say!(out, "model={} bins={} spikes={:?}", config.model, config.simulation.num_bins, spikes)?;
    let report = fit_data(config, &data.stimulus, &data.trains)?;
    say!(out, "converged={} iterations={}", report.converged, report.iterations)?;
    let correlation = match (&data.truth, &report.params) {
        (ModelParams::Single(t), ModelParams::Single(f)) => {
            let c = pearson_correlation(&concat(&t.k, &t.h), &concat(&f.k, &f.h));
            say!(out, "filter correlation: {c:.6}")?;
            say!(out, "bias: true {} fitted {:.6}", t.mu, f.mu)?;
            c
        }
        (ModelParams::Separable(t), ModelParams::Separable(f)) => {
            let (tk, fk) = (t.kernel(), f.kernel());
            let c = pearson_correlation(&concat(&tk, &t.h), &concat(&fk, &f.h));
            say!(out, "filter correlation: {c:.6}")?;
            say!(out, "kernel relative error: {:.6}", relative_frobenius_error(&tk, &fk))?;
            c
        }
        (ModelParams::Network(t), ModelParams::Network(f)) => {
            let mut worst = f64::INFINITY;
            for (i, (tp, fp)) in t.iter().zip(f).enumerate() {
                let c = pearson_correlation(&filters(tp), &filters(fp));
                say!(out, "neuron {i} filter correlation: {c:.6}")?;
                worst = worst.min(c);
            }
            worst
        }
        _ => unreachable!("fit uses the configured model kind"),
    };
    if !report.converged {
        return Err(Failure::NotConverged(format!(
            "fit did not converge: {}",
            report.warnings.last().map_or("no diagnostic", String::as_str)
        )));
    }
    let threshold = config.recover.min_correlation;
    if correlation.is_nan() || correlation < threshold {
        return Err(Failure::NotConverged(format!(
            "filter correlation {correlation:.6} below threshold {threshold}"
        )));
    }
    say!(out, "recovery passed (threshold {threshold})")?;
    Ok(())
}
