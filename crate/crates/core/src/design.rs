//! Binned data containers and the lagged regressors built from them.
//!
//! Every lag vector is ordered oldest-first, `(v[t - tau], ..., v[t - 1])`,
//! and never includes bin `t` itself. Bins `t < max(tau_k, tau_h)` lack a
//! full history and are dropped from every likelihood sum instead of being
//! zero-padded.

use crate::error::{GlmError, Result};

/// Spike counts per bin at a fixed bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    counts: Vec<u32>,
    delta: f64,
}

impl SpikeTrain {
    pub fn new(counts: Vec<u32>, delta: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(GlmError::InvalidInput("spike train has no bins".into()));
        }
        check_delta(delta)?;
        Ok(Self { counts, delta })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total_spikes(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Counts as reals, the form the regressor algebra consumes.
    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Real-valued stimulus over `num_locations` spatial locations and `num_bins`
/// time bins, stored location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    values: Vec<f64>,
    num_locations: usize,
    num_bins: usize,
    delta: f64,
}

impl Stimulus {
    /// Builds a stimulus from one time series per location.
    pub fn new(per_location: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        let num_locations = per_location.len();
        if num_locations == 0 {
            return Err(GlmError::InvalidInput("stimulus has no locations".into()));
        }
        let num_bins = per_location[0].len();
        if let Some(bad) = per_location.iter().find(|v| v.len() != num_bins) {
            return Err(GlmError::LengthMismatch {
                what: "stimulus location series",
                left: num_bins,
                right: bad.len(),
            });
        }
        Self::from_flat(per_location.concat(), num_locations, delta)
    }

    /// Single-location stimulus.
    pub fn scalar(values: Vec<f64>, delta: f64) -> Result<Self> {
        Self::from_flat(values, 1, delta)
    }

    /// `values[loc * num_bins + t]`.
    pub fn from_flat(values: Vec<f64>, num_locations: usize, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if num_locations == 0 || values.is_empty() || !values.len().is_multiple_of(num_locations) {
            return Err(GlmError::InvalidInput(format!(
                "stimulus of {} values cannot be split over {} locations",
                values.len(),
                num_locations
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GlmError::InvalidInput(format!(
                "stimulus value {pos} is not finite"
            )));
        }
        let num_bins = values.len() / num_locations;
        Ok(Self {
            values,
            num_locations,
            num_bins,
            delta,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn location(&self, loc: usize) -> &[f64] {
        &self.values[loc * self.num_bins..(loc + 1) * self.num_bins]
    }

    pub fn value(&self, loc: usize, t: usize) -> f64 {
        self.values[loc * self.num_bins + t]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(GlmError::InvalidInput(format!(
            "bin width must be positive and finite, got {delta}"
        )))
    }
}

/// Lag depths for the stimulus filter (`tau_k`) and the post-spike filter
/// (`tau_h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagConfig {
    pub tau_k: usize,
    pub tau_h: usize,
}

impl LagConfig {
    pub fn new(tau_k: usize, tau_h: usize) -> Result<Self> {
        if tau_k == 0 || tau_h == 0 {
            return Err(GlmError::InvalidInput(format!(
                "lag depths must be at least 1 (tau_k={tau_k}, tau_h={tau_h})"
            )));
        }
        Ok(Self { tau_k, tau_h })
    }

    /// First bin with a complete lag history.
    pub fn burn_in(&self) -> usize {
        self.tau_k.max(self.tau_h)
    }

    pub fn validate_for(&self, num_bins: usize) -> Result<()> {
        if self.tau_k == 0 || self.tau_h == 0 {
            return Err(GlmError::InvalidInput("lag depths must be at least 1".into()));
        }
        if self.tau_k > num_bins || self.tau_h > num_bins {
            return Err(GlmError::InvalidInput(format!(
                "lag depths (tau_k={}, tau_h={}) exceed series length {num_bins}",
                self.tau_k, self.tau_h
            )));
        }
        Ok(())
    }
}

/// Fixed regressors for one usable bin.
///
/// `x` holds the stimulus lag block flattened location-major: entry
/// `loc * tau_k + l` is the stimulus at location `loc`, bin
/// `bin_index - tau_k + l`. `y` holds spike-count lags (stored as reals).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub bin_index: usize,
    pub observed: u32,
}

/// Returns `(series[t - tau], ..., series[t - 1])`.
pub fn build_lag_vector<T: Copy>(series: &[T], tau: usize, t: usize) -> Result<Vec<T>> {
    if tau == 0 || t < tau || t > series.len() {
        return Err(GlmError::IndexOutOfRange {
            t,
            tau,
            len: series.len(),
        });
    }
    Ok(series[t - tau..t].to_vec())
}

fn check_aligned(stimulus: &Stimulus, spikes: &SpikeTrain) -> Result<()> {
    if stimulus.num_bins() != spikes.num_bins() {
        return Err(GlmError::LengthMismatch {
            what: "stimulus bins vs spike bins",
            left: stimulus.num_bins(),
            right: spikes.num_bins(),
        });
    }
    if stimulus.delta() != spikes.delta() {
        return Err(GlmError::DeltaMismatch {
            left: stimulus.delta(),
            right: spikes.delta(),
        });
    }
    Ok(())
}

/// Materializes one [`DesignRow`] per bin `t` in `max(tau_k, tau_h)..T`.
///
/// May return an empty sequence; likelihood evaluation rejects that as
/// insufficient data.
pub fn assemble_design(
    stimulus: &Stimulus,
    spikes: &SpikeTrain,
    cfg: &LagConfig,
) -> Result<Vec<DesignRow>> {
    check_aligned(stimulus, spikes)?;
    let num_bins = spikes.num_bins();
    cfg.validate_for(num_bins)?;
    let counts = spikes.counts_f64();
    let s = stimulus.num_locations();
    let rows = (cfg.burn_in()..num_bins)
        .map(|t| {
            let mut x = Vec::with_capacity(s * cfg.tau_k);
            for loc in 0..s {
                x.extend_from_slice(&stimulus.location(loc)[t - cfg.tau_k..t]);
            }
            DesignRow {
                x,
                y: counts[t - cfg.tau_h..t].to_vec(),
                bin_index: t,
                observed: spikes.counts()[t],
            }
        })
        .collect();
    Ok(rows)
}

/// A sequence of fixed regressor rows the likelihood kernels can walk.
///
/// Each visited row supplies the stimulus regressor, the history regressor
/// and the observed count. Rows are always visited in the same order, which
/// fixes the floating-point reduction order of every sum built on top.
/// Callback receiving the stimulus lags, history lags and spike count of one row.
pub type RowVisitor<'a> = dyn FnMut(&[f64], &[f64], u32) + 'a;

pub trait Regressors {
    fn stimulus_len(&self) -> usize;
    fn history_len(&self) -> usize;
    fn num_rows(&self) -> usize;
    fn for_each_row(&self, f: &mut RowVisitor<'_>);

    fn total_spikes(&self) -> u64 {
        let mut n = 0u64;
        self.for_each_row(&mut |_, _, obs| n += obs as u64);
        n
    }
}

impl Regressors for [DesignRow] {
    fn stimulus_len(&self) -> usize {
        self.first().map_or(0, |r| r.x.len())
    }

    fn history_len(&self) -> usize {
        self.first().map_or(0, |r| r.y.len())
    }

    fn num_rows(&self) -> usize {
        self.len()
    }

    fn for_each_row(&self, f: &mut RowVisitor<'_>) {
        for row in self {
            f(&row.x, &row.y, row.observed);
        }
    }
}

impl Regressors for Vec<DesignRow> {
    fn stimulus_len(&self) -> usize {
        self.as_slice().stimulus_len()
    }
    fn history_len(&self) -> usize {
        self.as_slice().history_len()
    }
    fn num_rows(&self) -> usize {
        self.len()
    }
    fn for_each_row(&self, f: &mut RowVisitor<'_>) {
        self.as_slice().for_each_row(f)
    }
}
