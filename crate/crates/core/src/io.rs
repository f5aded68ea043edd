//! Text formats for spike trains and stimuli, the TOML experiment
//! configuration and the JSON fit report.
//!
//! Spike files hold a `delta=<seconds>` header followed by one nonnegative
//! count per line. Stimulus files hold `delta=` and `locations=<s>` headers
//! followed by one whitespace-separated row of `s` values per bin. Numbers
//! are written with Rust's shortest round-trip formatting, so save followed
//! by load is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{LagConfig, SpikeTrain, Stimulus};
use crate::error::{GlmError, Result};
use crate::likelihood::GlmParams;
use crate::network::NeuronParams;
use crate::optimizer::{FitOptions, FitResult, TraceEntry};
use crate::separable::SeparableParams;
use crate::simulator::{SimConfig, StimulusKind};

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> GlmError + '_ {
    move |source| GlmError::Io { path: path.to_path_buf(), source }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> GlmError {
    GlmError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_error(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, text).map_err(io_error(path))
}

/// Numbered, trimmed lines with a trailing empty line dropped.
fn numbered_lines(text: &str) -> Vec<(usize, &str)> {
    let mut lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).collect();
    while lines.last().is_some_and(|(_, l)| l.is_empty()) {
        lines.pop();
    }
    lines
}

fn parse_header<'t>(path: &Path, line: Option<&(usize, &'t str)>, key: &str, at: usize) -> Result<&'t str> {
    let Some(&(n, text)) = line else {
        return Err(parse_error(path, at, format!("missing `{key}=` header")));
    };
    text.strip_prefix(key)
        .and_then(|rest| rest.trim_start().strip_prefix('='))
        .map(str::trim)
        .ok_or_else(|| parse_error(path, n, format!("expected `{key}=` header, found `{text}`")))
}

fn parse_delta(path: &Path, line: Option<&(usize, &str)>) -> Result<f64> {
    let n = line.map_or(1, |l| l.0);
    let value = parse_header(path, line, "delta", 1)?;
    match value.parse::<f64>() {
        Ok(d) if d.is_finite() && d > 0.0 => Ok(d),
        _ => Err(parse_error(path, n, format!("bin width must be a positive number, found `{value}`"))),
    }
}

/// Parses spike-file text; `path` is used only in error messages.
pub fn parse_spike_train(text: &str, path: &Path) -> Result<SpikeTrain> {
    let lines = numbered_lines(text);
    if lines.is_empty() {
        return Err(parse_error(path, 1, "empty file"));
    }
    let delta = parse_delta(path, lines.first())?;
    let mut counts = Vec::with_capacity(lines.len() - 1);
    for &(n, text) in &lines[1..] {
        if text.starts_with('-') || text.starts_with('\u{2212}') {
            return Err(parse_error(path, n, format!("negative spike count `{text}`")));
        }
        let count = text
            .parse::<u32>()
            .map_err(|_| parse_error(path, n, format!("invalid spike count `{text}`")))?;
        counts.push(count);
    }
    if counts.is_empty() {
        return Err(parse_error(path, lines[0].0, "no spike counts after header"));
    }
    SpikeTrain::new(counts, delta)
}

pub fn load_spike_train(path: impl AsRef<Path>) -> Result<SpikeTrain> {
    let path = path.as_ref();
    parse_spike_train(&read_text(path)?, path)
}

pub fn format_spike_train(train: &SpikeTrain) -> String {
    let mut out = format!("delta={}\n", train.delta());
    for c in train.counts() {
        writeln!(out, "{c}").expect("writing to a String");
    }
    out
}

pub fn save_spike_train(train: &SpikeTrain, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_spike_train(train))
}

/// Parses stimulus-file text; `path` is used only in error messages.
pub fn parse_stimulus(text: &str, path: &Path) -> Result<Stimulus> {
    let lines = numbered_lines(text);
    if lines.is_empty() {
        return Err(parse_error(path, 1, "empty file"));
    }
    let delta = parse_delta(path, lines.first())?;
    let loc_line = lines.get(1);
    let raw = parse_header(path, loc_line, "locations", 2)?;
    let locations = match raw.parse::<usize>() {
        Ok(s) if s > 0 => s,
        _ => {
            return Err(parse_error(
                path,
                loc_line.map_or(2, |l| l.0),
                format!("locations must be a positive integer, found `{raw}`"),
            ))
        }
    };
    let bins = lines.len() - 2;
    if bins == 0 {
        return Err(parse_error(path, lines[1].0, "no stimulus rows after headers"));
    }
    let mut values = vec![0.0; locations * bins];
    for (t, &(n, text)) in lines[2..].iter().enumerate() {
        let mut count = 0;
        for (loc, field) in text.split_whitespace().enumerate() {
            if loc >= locations {
                return Err(parse_error(path, n, format!("more than {locations} values in row")));
            }
            let v = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, n, format!("invalid stimulus value `{field}`")))?;
            values[loc * bins + t] = v;
            count += 1;
        }
        if count != locations {
            return Err(parse_error(path, n, format!("expected {locations} values, found {count}")));
        }
    }
    Stimulus::from_flat(values, locations, delta)
}

pub fn load_stimulus(path: impl AsRef<Path>) -> Result<Stimulus> {
    let path = path.as_ref();
    parse_stimulus(&read_text(path)?, path)
}

pub fn format_stimulus(stim: &Stimulus) -> String {
    let mut out = format!("delta={}\nlocations={}\n", stim.delta(), stim.num_locations());
    for t in 0..stim.num_bins() {
        for loc in 0..stim.num_locations() {
            if loc > 0 {
                out.push(' ');
            }
            write!(out, "{}", stim.value(loc, t)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn save_stimulus(stim: &Stimulus, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_stimulus(stim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Single,
    Separable,
    Network,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Single => "single",
            ModelKind::Separable => "separable",
            ModelKind::Network => "network",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimulusSource {
    #[default]
    Gaussian,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    pub num_bins: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stimulus: StimulusSource,
    #[serde(default = "one")]
    pub num_locations: usize,
    #[serde(default = "one")]
    pub num_neurons: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparableSettings {
    pub starts: usize,
    pub perturbation: f64,
}

impl Default for SeparableSettings {
    fn default() -> Self {
        Self { starts: 3, perturbation: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSettings {
    /// Minimum Pearson correlation between true and fitted filters for
    /// `recover` to succeed.
    pub min_correlation: f64,
}

impl Default for RecoverSettings {
    fn default() -> Self {
        Self { min_correlation: 0.7 }
    }
}

/// File locations, relative to the directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    pub stimulus: PathBuf,
    /// One file per neuron; empty means `spikes.txt`, or `spikes_<i>.txt`
    /// for networks.
    pub spikes: Vec<PathBuf>,
    pub report: PathBuf,
}

impl Default for PathSettings {
    fn default() -> Self {
        Self {
            stimulus: "stimulus.txt".into(),
            spikes: Vec::new(),
            report: "report.json".into(),
        }
    }
}

impl PathSettings {
    pub fn spike_paths(&self, model: ModelKind, num_neurons: usize) -> Vec<PathBuf> {
        if !self.spikes.is_empty() {
            return self.spikes.clone();
        }
        match model {
            ModelKind::Network => (0..num_neurons).map(|i| format!("spikes_{i}.txt").into()).collect(),
            _ => vec!["spikes.txt".into()],
        }
    }
}

/// Ground-truth parameters for simulation. Missing pieces fall back to
/// built-in shapes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Full stimulus filter, location-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_filter: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_filter: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neurons: Option<Vec<NeuronParams>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub delta: f64,
    pub lags: LagConfig,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub separable: SeparableSettings,
    pub simulation: SimulationSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSettings>,
    #[serde(default)]
    pub recover: RecoverSettings,
    #[serde(default)]
    pub paths: PathSettings,
}

/// Ground truth resolved for a model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelParams {
    Single(GlmParams),
    Separable(SeparableParams),
    Network(Vec<NeuronParams>),
}

/// Damped cosine, strongest at the most recent lag; oldest lag first.
pub fn default_stimulus_filter(tau_k: usize) -> Vec<f64> {
    (0..tau_k)
        .map(|l| {
            let d = (tau_k - 1 - l) as f64;
            0.5 * (0.6 * d).cos() * (-d / 4.0).exp()
        })
        .collect()
}

/// Refractory suppression decaying with lag; oldest lag first.
pub fn default_history_filter(tau_h: usize) -> Vec<f64> {
    (0..tau_h)
        .map(|l| -2.0 * (-((tau_h - 1 - l) as f64) / 2.0).exp())
        .collect()
}

/// Center-surround profile across locations.
pub fn default_spatial_filter(locations: usize) -> Vec<f64> {
    let center = (locations as f64 - 1.0) / 2.0;
    let width = (locations as f64 / 6.0).max(0.5);
    (0..locations)
        .map(|i| {
            let d2 = (i as f64 - center).powi(2);
            (-d2 / (2.0 * width * width)).exp() - 0.5 * (-d2 / (8.0 * width * width)).exp()
        })
        .collect()
}

const DEFAULT_BIAS: f64 = 3.0;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GlmError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GlmError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&read_text(path)?).map_err(|e| match e {
            GlmError::Config(msg) => GlmError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(GlmError::Config(format!("delta must be positive, got {}", self.delta)));
        }
        LagConfig::new(self.lags.tau_k, self.lags.tau_h).map_err(|e| GlmError::Config(e.to_string()))?;
        self.fit.validate().map_err(|e| GlmError::Config(e.to_string()))?;
        let sim = &self.simulation;
        if sim.num_locations == 0 || sim.num_neurons == 0 {
            return Err(GlmError::Config("num_locations and num_neurons must be at least 1".into()));
        }
        if self.model == ModelKind::Network && sim.num_locations != 1 {
            return Err(GlmError::Config("network models take a single-location stimulus".into()));
        }
        if self.model != ModelKind::Network && sim.num_neurons != 1 {
            return Err(GlmError::Config(format!("{} models have exactly one neuron", self.model)));
        }
        if self.separable.starts == 0 || self.separable.perturbation.is_nan() || self.separable.perturbation < 0.0 {
            return Err(GlmError::Config("separable starts must be >= 1 and perturbation >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.recover.min_correlation) {
            return Err(GlmError::Config("recover.min_correlation must lie in [-1, 1]".into()));
        }
        if self.model == ModelKind::Network && !self.paths.spikes.is_empty() && self.paths.spikes.len() != sim.num_neurons {
            return Err(GlmError::Config(format!(
                "{} spike paths given for {} neurons",
                self.paths.spikes.len(),
                sim.num_neurons
            )));
        }
        self.truth_params().map(|_| ())
    }

    pub fn num_locations(&self) -> usize {
        self.simulation.num_locations
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig::new(self.simulation.num_bins, self.delta, self.simulation.seed);
        cfg.stimulus_kind = match self.simulation.stimulus {
            StimulusSource::Gaussian => StimulusKind::GaussianWhiteNoise,
            StimulusSource::Constant => StimulusKind::Constant,
        };
        cfg
    }

    /// Ground truth with defaults filled in, checked against the lag depths.
    pub fn truth_params(&self) -> Result<ModelParams> {
        let truth = self.truth.clone().unwrap_or_default();
        let LagConfig { tau_k, tau_h } = self.lags;
        let locs = self.num_locations();
        let mu = truth.mu.unwrap_or(DEFAULT_BIAS);
        let h = truth.h.clone().unwrap_or_else(|| default_history_filter(tau_h));
        let expect = |what: &str, v: &[f64], n: usize| -> Result<()> {
            if v.len() == n {
                Ok(())
            } else {
                Err(GlmError::Config(format!("truth.{what} has {} entries, expected {n}", v.len())))
            }
        };
        expect("h", &h, tau_h)?;
        let spatial = || truth.s_filter.clone().unwrap_or_else(|| default_spatial_filter(locs));
        let temporal = || truth.t_filter.clone().unwrap_or_else(|| default_stimulus_filter(tau_k));
        match self.model {
            ModelKind::Single => {
                let k = match &truth.k {
                    Some(k) => k.clone(),
                    None if locs == 1 => default_stimulus_filter(tau_k),
                    None => SeparableParams { s_filter: spatial(), t_filter: temporal(), h: vec![], mu }.kernel(),
                };
                expect("k", &k, locs * tau_k)?;
                Ok(ModelParams::Single(GlmParams { k, h, mu }))
            }
            ModelKind::Separable => {
                let (s_filter, t_filter) = (spatial(), temporal());
                expect("s_filter", &s_filter, locs)?;
                expect("t_filter", &t_filter, tau_k)?;
                Ok(ModelParams::Separable(SeparableParams { s_filter, t_filter, h, mu }))
            }
            ModelKind::Network => {
                let n = self.simulation.num_neurons;
                let neurons = match &truth.neurons {
                    Some(list) => list.clone(),
                    None => default_network(tau_k, tau_h, n, mu),
                };
                if neurons.len() != n {
                    return Err(GlmError::Config(format!("truth.neurons has {} entries, expected {n}", neurons.len())));
                }
                for (i, p) in neurons.iter().enumerate() {
                    expect(&format!("neurons[{i}].k"), &p.k, tau_k)?;
                    if p.h_couplings.len() != n {
                        return Err(GlmError::Config(format!(
                            "truth.neurons[{i}].h_couplings has {} filters, expected {n}",
                            p.h_couplings.len()
                        )));
                    }
                    for (j, c) in p.h_couplings.iter().enumerate() {
                        expect(&format!("neurons[{i}].h_couplings[{j}]"), c, tau_h)?;
                    }
                }
                Ok(ModelParams::Network(neurons))
            }
        }
    }
}

/// Refractory self-history for every neuron, alternating stimulus filter
/// signs, and an excitatory coupling from neuron 1 onto neuron 0.
fn default_network(tau_k: usize, tau_h: usize, n: usize, mu: f64) -> Vec<NeuronParams> {
    (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut h_couplings = vec![vec![0.0; tau_h]; n];
            h_couplings[i] = default_history_filter(tau_h);
            if i == 0 && n > 1 {
                h_couplings[1] = default_history_filter(tau_h).iter().map(|v| -v / 2.0).collect();
            }
            NeuronParams {
                k: default_stimulus_filter(tau_k).iter().map(|v| sign * v).collect(),
                h_couplings,
                mu,
            }
        })
        .collect()
}

/// Convergence record of one fitted neuron in a network report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronSummary {
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

/// JSON document describing a completed fit.
///
/// Network reports sum the per-neuron log-likelihoods, list per-neuron
/// traces under `neurons`, and leave the top-level trace empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub tool: String,
    pub version: String,
    pub model: ModelKind,
    pub params: ModelParams,
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neurons: Vec<NeuronSummary>,
    pub config: ExperimentConfig,
}

impl FitReport {
    fn base(model: ModelKind, params: ModelParams, config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            model,
            params,
            final_loglik: 0.0,
            iterations: 0,
            converged: true,
            trace: Vec::new(),
            warnings: Vec::new(),
            neurons: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn single(result: FitResult<GlmParams>, config: &ExperimentConfig) -> Self {
        let FitResult { params, final_loglik, iterations, converged, trace, warnings } = result;
        Self {
            final_loglik,
            iterations,
            converged,
            trace,
            warnings,
            ..Self::base(ModelKind::Single, ModelParams::Single(params), config)
        }
    }

    pub fn separable(result: FitResult<SeparableParams>, config: &ExperimentConfig) -> Self {
        let FitResult { params, final_loglik, iterations, converged, trace, warnings } = result;
        Self {
            final_loglik,
            iterations,
            converged,
            trace,
            warnings,
            ..Self::base(ModelKind::Separable, ModelParams::Separable(params), config)
        }
    }

    pub fn network(results: Vec<FitResult<NeuronParams>>, config: &ExperimentConfig) -> Self {
        let mut params = Vec::with_capacity(results.len());
        let mut report = Self::base(ModelKind::Network, ModelParams::Network(Vec::new()), config);
        for (i, r) in results.into_iter().enumerate() {
            report.final_loglik += r.final_loglik;
            report.iterations = report.iterations.max(r.iterations);
            report.converged &= r.converged;
            report.warnings.extend(r.warnings.iter().map(|w| format!("neuron {i}: {w}")));
            report.neurons.push(NeuronSummary {
                final_loglik: r.final_loglik,
                iterations: r.iterations,
                converged: r.converged,
                trace: r.trace,
                warnings: r.warnings,
            });
            params.push(r.params);
        }
        report.params = ModelParams::Network(params);
        report
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_fit_report(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &report.to_json()?)
}

pub fn load_fit_report(path: impl AsRef<Path>) -> Result<FitReport> {
    let path = path.as_ref();
    FitReport::from_json(&read_text(path)?)
}
