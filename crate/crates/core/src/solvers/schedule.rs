//! Anchor mini-batch sizes and the geometric inner-loop length.

use rand::Rng;

use crate::model::TransitionDataset;
use crate::objective::{sample_grad_into, SaddleIterate};

/// Mini-batch size used for the anchor gradient of epoch `m`.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchSchedule {
    Fixed(usize),
    /// `ceil(initial * growth^m)`.
    Multiplicative {
        initial: usize,
        growth: f64,
    },
    /// `ceil(n xi_sq / (xi_sq + n alpha rho^m))`, for `rho < 2/3`.
    VarianceDriven {
        xi_sq: f64,
        alpha: f64,
        rho: f64,
    },
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            BatchSchedule::Fixed(0) => Err("fixed batch size must be at least 1".into()),
            BatchSchedule::Multiplicative { initial, growth } => {
                if initial == 0 {
                    Err("initial batch size must be at least 1".into())
                } else if !(growth > 1.0) || !growth.is_finite() {
                    Err(format!("growth factor must be > 1, got {growth}"))
                } else {
                    Ok(())
                }
            }
            BatchSchedule::VarianceDriven { xi_sq, alpha, rho } => {
                if !(xi_sq > 0.0) || !xi_sq.is_finite() {
                    Err(format!("xi^2 must be positive, got {xi_sq}"))
                } else if !(alpha > 0.0) || !alpha.is_finite() {
                    Err(format!("alpha must be positive, got {alpha}"))
                } else if !(rho > 0.0 && rho < 2.0 / 3.0) {
                    Err(format!("rho must lie in (0, 2/3), got {rho}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Ceiling that ignores representation error, so `100 * 1.1^2` gives 121, not 122.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Batch size for epoch `m`, clamped to `[1, n]`.
pub fn schedule_next(schedule: &BatchSchedule, m: usize, n: usize) -> usize {
    let raw = match *schedule {
        BatchSchedule::Fixed(b) => b as f64,
        BatchSchedule::Multiplicative { initial, growth } => {
            ceil_tolerant(initial as f64 * growth.powf(m as f64))
        }
        BatchSchedule::VarianceDriven { xi_sq, alpha, rho } => {
            let n = n as f64;
            ceil_tolerant(n * xi_sq / (xi_sq + n * alpha * rho.powf(m as f64)))
        }
    };
    if raw.is_nan() {
        return n;
    }
    raw.clamp(1.0, n as f64) as usize
}

/// Draws an inner-loop length with `P(K = k) = (1/(B+1)) (B/(B+1))^k`, `k >= 0`, whose mean is `B`.
///
/// Uses the inverse CDF `floor(ln U / ln(B/(B+1)))` with `U` uniform on `(0, 1]`.
pub fn geom_epoch_len<R: Rng + ?Sized>(rng: &mut R, batch: u64) -> u64 {
    assert!(batch >= 1, "batch size must be positive");
    let u = 1.0 - rng.random::<f64>();
    let log_q = -(1.0 / batch as f64).ln_1p();
    let k = (u.ln() / log_q).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}

/// Unbiased sample variance `1/(n-1) sum_t |F_t - F|^2` of the per-sample gradients at `it`.
///
/// Used as a point estimate of the uniform variance bound of the variance-driven schedule.
pub fn estimate_xi_sq(data: &TransitionDataset, it: &SaddleIterate) -> f64 {
    let n = data.len();
    let d2 = 2 * data.dim();
    let mut grads = vec![0.0; n * d2];
    let mut mean = vec![0.0; d2];
    for t in 0..n {
        let g = &mut grads[t * d2..(t + 1) * d2];
        sample_grad_into(data, t, it.theta.as_slice(), it.omega.as_slice(), g);
        for (m, v) in mean.iter_mut().zip(g.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    if n < 2 {
        return f64::MIN_POSITIVE;
    }
    let ss: f64 = grads
        .chunks_exact(d2)
        .map(|g| {
            g.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    (ss / (n - 1) as f64).max(f64::MIN_POSITIVE)
}
