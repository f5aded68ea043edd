use std::path::PathBuf;

use thiserror::Error;

/// Diagnostics carried by a Newton step that failed to find an ascent point.
#[derive(Debug, Clone, PartialEq)]
pub struct StallDiagnostics {
    pub loglik: f64,
    pub grad_max_norm: f64,
    pub damping: f64,
    pub halvings: u32,
}

impl std::fmt::Display for StallDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "loglik={} grad_max_norm={:e} damping={:e} after {} halvings",
            self.loglik, self.grad_max_norm, self.damping, self.halvings
        )
    }
}

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("lag index out of range: t={t}, tau={tau}, series length {len}")]
    IndexOutOfRange { t: usize, tau: usize, len: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("bin width mismatch: {left} vs {right}")]
    DeltaMismatch { left: f64, right: f64 },

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no ascent found by backtracking: {0}")]
    StalledStep(StallDiagnostics),

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    #[error("non-finite intensity at bin {bin}: linear predictor {predictor}")]
    NonFiniteIntensity { bin: usize, predictor: f64 },

    #[error("neuron index {index} out of range for population of {size}")]
    NeuronIndex { index: usize, size: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GlmError>;
