//! Maximum-likelihood fitting of Poisson generalized linear models of spiking
//! neurons.
//!
//! The conditional intensity uses the exponential link,
//! `lambda_t = exp(k . x_t + h . y_t + mu)`, where `x_t` and `y_t` are the
//! stimulus and spike-count lags strictly preceding bin `t`. On top of the
//! single-neuron model the crate provides a space-time separable receptive
//! field (`K = t s^T`), coupled populations with cross-neuron post-spike
//! filters, a seeded simulator for ground-truth recovery, and the `spikeglm`
//! command-line tool.

pub mod calculus;
pub mod cli;
pub mod design;
pub mod error;
pub mod io;
mod kernel;
pub mod likelihood;
pub mod network;
pub mod optimizer;
pub mod separable;
pub mod simulator;

pub use calculus::{check_gradient_fd, gradient, hessian, Gradient, GradientCheckReport, Hessian};
pub use design::{assemble_design, build_lag_vector, DesignRow, LagConfig, Regressors, SpikeTrain, Stimulus};
pub use error::{GlmError, Result};
pub use kernel::PREDICTOR_CLAMP;
pub use likelihood::{bin_probability, conditional_intensity, log_likelihood, GlmParams, Intensity};
pub use optimizer::{fit, fit_from, initialize, newton_step, FitOptions, FitResult, TraceEntry};
