//! Single-pass accumulation of the Poisson GLM log-likelihood and its
//! derivatives over a flattened parameter vector `[k | h | mu]`.
//!
//! Rows are visited sequentially in design order; every sum is therefore
//! reproducible bit-for-bit for identical inputs.

use nalgebra::{DMatrix, DVector};

use crate::design::Regressors;
use crate::error::{GlmError, Result};

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const PREDICTOR_CLAMP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
    /// Number of rows whose linear predictor hit the clamp.
    pub clamped: usize,
}

/// Clamps the linear predictor, reporting whether clamping happened.
#[inline]
pub(crate) fn clamp_predictor(eta: f64) -> (f64, bool) {
    if eta > PREDICTOR_CLAMP {
        (PREDICTOR_CLAMP, true)
    } else if eta < -PREDICTOR_CLAMP {
        (-PREDICTOR_CLAMP, true)
    } else if eta.is_nan() {
        (eta, true)
    } else {
        (eta, false)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn check_dims<R: Regressors + ?Sized>(theta: &[f64], rows: &R) -> Result<(usize, usize)> {
    if rows.num_rows() == 0 {
        return Err(GlmError::InsufficientData("design has no usable bins".into()));
    }
    let nx = rows.stimulus_len();
    let ny = rows.history_len();
    if theta.len() != nx + ny + 1 {
        return Err(GlmError::DimensionMismatch {
            what: "parameter vector [k | h | mu]",
            expected: nx + ny + 1,
            got: theta.len(),
        });
    }
    Ok((nx, ny))
}

pub(crate) fn evaluate<R: Regressors + ?Sized>(
    theta: &[f64],
    rows: &R,
    delta: f64,
    order: Order,
) -> Result<Evaluation> {
    let (nx, ny) = check_dims(theta, rows)?;
    let p = nx + ny + 1;
    let (k, rest) = theta.split_at(nx);
    let (h, mu) = rest.split_at(ny);
    let mu = mu[0];

    let mut spike_sum = 0.0;
    let mut rate_sum = 0.0;
    let mut clamped = 0usize;
    let mut grad = vec![0.0; if order >= Order::Gradient { p } else { 0 }];
    // upper triangle, row-major
    let mut upper = vec![0.0; if order >= Order::Hessian { p * (p + 1) / 2 } else { 0 }];
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(p);

    rows.for_each_row(&mut |x, y, obs| {
        let eta = dot(k, x) + dot(h, y) + mu;
        let (eta, was_clamped) = clamp_predictor(eta);
        clamped += was_clamped as usize;
        let rate = eta.exp();
        let obs = obs as f64;
        if obs > 0.0 {
            spike_sum += obs * eta;
        }
        rate_sum += rate;
        if order < Order::Gradient {
            return;
        }
        nz.clear();
        nz.extend(x.iter().chain(y).copied().enumerate().filter(|&(_, v)| v != 0.0));
        nz.push((p - 1, 1.0));
        let resid = obs - delta * rate;
        for &(a, za) in &nz {
            grad[a] += resid * za;
        }
        if order < Order::Hessian {
            return;
        }
        let w = delta * rate;
        for (ia, &(a, za)) in nz.iter().enumerate() {
            let base = a * p - a * (a + 1) / 2;
            let wa = w * za;
            for &(b, zb) in &nz[ia..] {
                upper[base + b] -= wa * zb;
            }
        }
    });

    let hessian = (order >= Order::Hessian).then(|| {
        let mut m = DMatrix::zeros(p, p);
        for a in 0..p {
            let base = a * p - a * (a + 1) / 2;
            for b in a..p {
                m[(a, b)] = upper[base + b];
                m[(b, a)] = upper[base + b];
            }
        }
        m
    });

    Ok(Evaluation {
        loglik: spike_sum - delta * rate_sum,
        gradient: DVector::from_vec(grad),
        hessian,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_flags() {
        assert_eq!(clamp_predictor(1.0), (1.0, false));
        assert_eq!(clamp_predictor(600.0), (PREDICTOR_CLAMP, true));
        assert_eq!(clamp_predictor(-600.0), (-PREDICTOR_CLAMP, true));
        assert!(clamp_predictor(f64::NAN).1);
    }

    #[test]
    fn upper_triangle_indexing_covers_matrix() {
        let p = 5;
        let mut seen = vec![false; p * (p + 1) / 2];
        for a in 0..p {
            let base = a * p - a * (a + 1) / 2;
            for b in a..p {
                assert!(!seen[base + b]);
                seen[base + b] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
