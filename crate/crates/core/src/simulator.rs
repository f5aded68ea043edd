//! Seeded ground-truth simulation of GLM spike trains.
//!
//! Random streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`; the stream id separates the consumers:
//!
//! * the stimulus uses stream [`STIMULUS_STREAM`] and draws standard normals
//!   (`rand_distr::StandardNormal`) location by location, bin by bin;
//! * neuron `i` uses stream `i` and consumes exactly one uniform `f64` per
//!   bin, burn-in bins included.
//!
//! A bin emits one spike when its uniform falls below
//! `p = 1 - exp(-lambda * delta)`, the probability of at least one Poisson
//! event; bins before the first complete lag history emit nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{SpikeTrain, Stimulus};
use crate::error::{GlmError, Result};
use crate::kernel::{dot, PREDICTOR_CLAMP};
use crate::likelihood::GlmParams;
use crate::network::{NeuronParams, PopulationData};

pub const STIMULUS_STREAM: u64 = u64::MAX;

/// Per-bin expected counts above this trigger a warning: the binary emission
/// rule then departs noticeably from Poisson counts.
pub const HIGH_RATE_WARNING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum StimulusKind {
    GaussianWhiteNoise,
    Constant,
    Custom(Stimulus),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_bins: usize,
    pub delta: f64,
    pub seed: u64,
    pub stimulus_kind: StimulusKind,
}

impl SimConfig {
    pub fn new(num_bins: usize, delta: f64, seed: u64) -> Self {
        Self {
            num_bins,
            delta,
            seed,
            stimulus_kind: StimulusKind::GaussianWhiteNoise,
        }
    }

    fn validate(&self, max_lag: usize) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(GlmError::InvalidInput(format!("bin width must be positive, got {}", self.delta)));
        }
        if self.num_bins == 0 || self.num_bins < max_lag {
            return Err(GlmError::InvalidInput(format!(
                "num_bins={} must be at least the largest lag depth {max_lag}",
                self.num_bins
            )));
        }
        Ok(())
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_stimulus(cfg: &SimConfig, num_locations: usize) -> Result<Stimulus> {
    cfg.validate(1)?;
    if num_locations == 0 {
        return Err(GlmError::InvalidInput("stimulus needs at least one location".into()));
    }
    match &cfg.stimulus_kind {
        StimulusKind::GaussianWhiteNoise => {
            let mut rng = stream_rng(cfg.seed, STIMULUS_STREAM);
            let values = (0..num_locations * cfg.num_bins)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            Stimulus::from_flat(values, num_locations, cfg.delta)
        }
        StimulusKind::Constant => {
            Stimulus::from_flat(vec![1.0; num_locations * cfg.num_bins], num_locations, cfg.delta)
        }
        StimulusKind::Custom(stim) => {
            if stim.num_locations() != num_locations || stim.num_bins() != cfg.num_bins {
                return Err(GlmError::InvalidInput(format!(
                    "custom stimulus is {}x{}, expected {num_locations}x{}",
                    stim.num_locations(),
                    stim.num_bins(),
                    cfg.num_bins
                )));
            }
            Ok(stim.clone())
        }
    }
}

struct SimNeuron<'a> {
    k: &'a [f64],
    couplings: &'a [Vec<f64>],
    mu: f64,
}

fn lag_depths(neurons: &[SimNeuron<'_>], num_locations: usize) -> Result<(usize, usize)> {
    let first = neurons
        .first()
        .ok_or_else(|| GlmError::InvalidInput("population is empty".into()))?;
    let k_len = first.k.len();
    if k_len == 0 || k_len % num_locations != 0 {
        return Err(GlmError::DimensionMismatch {
            what: "stimulus filter length (multiple of locations)",
            expected: num_locations,
            got: k_len,
        });
    }
    let tau_h = first.couplings.first().map_or(0, |h| h.len());
    if tau_h == 0 {
        return Err(GlmError::InvalidInput("post-spike filters must have at least one lag".into()));
    }
    for n in neurons {
        if n.k.len() != k_len {
            return Err(GlmError::DimensionMismatch { what: "stimulus filter", expected: k_len, got: n.k.len() });
        }
        if n.couplings.len() != neurons.len() {
            return Err(GlmError::DimensionMismatch {
                what: "coupling filters per neuron",
                expected: neurons.len(),
                got: n.couplings.len(),
            });
        }
        if let Some(bad) = n.couplings.iter().find(|h| h.len() != tau_h) {
            return Err(GlmError::DimensionMismatch { what: "coupling filter", expected: tau_h, got: bad.len() });
        }
        if !n.mu.is_finite() || !n.k.iter().chain(n.couplings.iter().flatten()).all(|v| v.is_finite()) {
            return Err(GlmError::InvalidInput("simulation parameters must be finite".into()));
        }
    }
    Ok((k_len / num_locations, tau_h))
}

/// `forced` pins `(neuron, bin)` to a count after its uniform is drawn, so
/// every stream stays aligned with the unforced run.
fn simulate_core(
    neurons: &[SimNeuron<'_>],
    stimulus: &Stimulus,
    cfg: &SimConfig,
    forced: &[(usize, usize, u32)],
) -> Result<Vec<Vec<u32>>> {
    let s = stimulus.num_locations();
    let (tau_k, tau_h) = lag_depths(neurons, s)?;
    cfg.validate(tau_k.max(tau_h))?;
    if stimulus.num_bins() != cfg.num_bins {
        return Err(GlmError::LengthMismatch {
            what: "stimulus bins vs num_bins",
            left: stimulus.num_bins(),
            right: cfg.num_bins,
        });
    }
    let n = neurons.len();
    let burn_in = tau_k.max(tau_h);
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream_rng(cfg.seed, i as u64)).collect();
    let mut counts = vec![vec![0.0f64; cfg.num_bins]; n];
    let mut probs = vec![0.0; n];
    let mut high_rate_bins = 0usize;

    for t in 0..cfg.num_bins {
        if t >= burn_in {
            for (i, neuron) in neurons.iter().enumerate() {
                let mut eta = neuron.mu;
                for loc in 0..s {
                    eta += dot(&neuron.k[loc * tau_k..(loc + 1) * tau_k], &stimulus.location(loc)[t - tau_k..t]);
                }
                for (j, h) in neuron.couplings.iter().enumerate() {
                    eta += dot(h, &counts[j][t - tau_h..t]);
                }
                if eta.is_nan() || eta > PREDICTOR_CLAMP {
                    return Err(GlmError::NonFiniteIntensity { bin: t, predictor: eta });
                }
                let mean = eta.max(-PREDICTOR_CLAMP).exp() * cfg.delta;
                if mean > HIGH_RATE_WARNING {
                    high_rate_bins += 1;
                }
                probs[i] = -(-mean).exp_m1();
            }
        }
        for i in 0..n {
            let u: f64 = rngs[i].random();
            if t >= burn_in && u < probs[i] {
                counts[i][t] = 1.0;
            }
        }
        for &(i, bin, c) in forced {
            if bin == t && i < n {
                counts[i][t] = c as f64;
            }
        }
    }
    if high_rate_bins > 0 {
        log::warn!(
            "{high_rate_bins} neuron-bins had lambda*delta > {HIGH_RATE_WARNING}; binary emission saturates there"
        );
    }
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as u32).collect())
        .collect())
}

fn single_neuron(params: &GlmParams) -> [Vec<f64>; 1] {
    [params.h.clone()]
}

/// Simulates one neuron with history feedback from its own spikes.
pub fn simulate_spike_train(params: &GlmParams, stimulus: &Stimulus, cfg: &SimConfig) -> Result<SpikeTrain> {
    simulate_spike_train_forced(params, stimulus, cfg, &[])
}

/// As [`simulate_spike_train`], with `(bin, count)` pairs overriding the
/// emitted count after the bin's draw.
pub fn simulate_spike_train_forced(
    params: &GlmParams,
    stimulus: &Stimulus,
    cfg: &SimConfig,
    forced: &[(usize, u32)],
) -> Result<SpikeTrain> {
    let couplings = single_neuron(params);
    let neuron = SimNeuron { k: &params.k, couplings: &couplings, mu: params.mu };
    let forced: Vec<_> = forced.iter().map(|&(t, c)| (0, t, c)).collect();
    let mut counts = simulate_core(&[neuron], stimulus, cfg, &forced)?;
    SpikeTrain::new(counts.pop().expect("one neuron"), cfg.delta)
}

/// Simulates a coupled population. Within a bin all intensities are computed
/// from strictly earlier history before any neuron's draw.
pub fn simulate_population(
    all_params: &[NeuronParams],
    stimulus: &Stimulus,
    cfg: &SimConfig,
) -> Result<PopulationData> {
    let neurons: Vec<SimNeuron<'_>> = all_params
        .iter()
        .map(|p| SimNeuron { k: &p.k, couplings: &p.h_couplings, mu: p.mu })
        .collect();
    let counts = simulate_core(&neurons, stimulus, cfg, &[])?;
    let trains = counts
        .into_iter()
        .map(|c| SpikeTrain::new(c, cfg.delta))
        .collect::<Result<Vec<_>>>()?;
    PopulationData::new(stimulus.clone(), trains)
}
