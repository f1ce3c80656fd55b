//! Objective functions and the stacked saddle gradient.
//!
//! The saddle function is `f(theta, omega) = <b - A theta, omega> - 1/2 |omega|^2_C`
//! and its gradient field stacks the primal gradient on top of the negated dual gradient:
//!
//! ```text
//! F(theta, omega) = ( -A^T omega ,  A theta - b + C omega )
//! ```
//!
//! Per-sample fields `F_t` use the rank-1 factors of the model module and cost O(d).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ModelStats, TransitionDataset};

/// A primal/dual pair `(theta, omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleIterate {
    pub theta: DVector<f64>,
    pub omega: DVector<f64>,
}

impl SaddleIterate {
    pub fn new(theta: DVector<f64>, omega: DVector<f64>) -> Result<Self> {
        if theta.len() != omega.len() || theta.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "theta and omega must share a positive length (got {} and {})",
                theta.len(),
                omega.len()
            )));
        }
        if theta.iter().chain(omega.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(
                "iterate has non-finite entries".into(),
            ));
        }
        Ok(SaddleIterate { theta, omega })
    }

    pub fn zeros(d: usize) -> Self {
        SaddleIterate {
            theta: DVector::zeros(d),
            omega: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Stacks `(theta, omega / sqrt(beta))`.
    pub fn to_z(&self, beta: f64) -> DVector<f64> {
        let d = self.dim();
        let scale = 1.0 / beta.sqrt();
        DVector::from_fn(2 * d, |i, _| {
            if i < d {
                self.theta[i]
            } else {
                self.omega[i - d] * scale
            }
        })
    }

    pub fn from_z(z: &DVector<f64>, beta: f64) -> Self {
        let d = z.len() / 2;
        let scale = beta.sqrt();
        SaddleIterate {
            theta: z.rows(0, d).into_owned(),
            omega: z.rows(d, d) * scale,
        }
    }
}

/// `1/2 |A theta - b|^2_{C^-1}`.
pub fn em_mspbe(stats: &ModelStats, theta: &DVector<f64>) -> Result<f64> {
    let residual = &stats.a_hat * theta - &stats.b_hat;
    let y = stats.solve_c(&residual)?;
    Ok((0.5 * residual.dot(&y)).max(0.0))
}

/// `<b - A theta, omega> - 1/2 omega^T C omega`.
pub fn saddle_value(stats: &ModelStats, it: &SaddleIterate) -> f64 {
    let gap = &stats.b_hat - &stats.a_hat * &it.theta;
    gap.dot(&it.omega) - 0.5 * it.omega.dot(&(&stats.c_hat * &it.omega))
}

/// The dual maximizer `C^-1 (b - A theta)` for a fixed `theta`.
pub fn dual_maximizer(stats: &ModelStats, theta: &DVector<f64>) -> Result<DVector<f64>> {
    stats.solve_c(&(&stats.b_hat - &stats.a_hat * theta))
}

pub fn grad_full(stats: &ModelStats, it: &SaddleIterate) -> DVector<f64> {
    let d = it.dim();
    let top = -(stats.a_hat.tr_mul(&it.omega));
    let bottom = &stats.a_hat * &it.theta - &stats.b_hat + &stats.c_hat * &it.omega;
    let mut out = DVector::zeros(2 * d);
    out.rows_mut(0, d).copy_from(&top);
    out.rows_mut(d, d).copy_from(&bottom);
    out
}

pub fn grad_sample(data: &TransitionDataset, t: usize, it: &SaddleIterate) -> Result<DVector<f64>> {
    data.check_index(t)?;
    let mut out = DVector::zeros(2 * data.dim());
    sample_grad_into(
        data,
        t,
        it.theta.as_slice(),
        it.omega.as_slice(),
        out.as_mut_slice(),
    );
    Ok(out)
}

/// `F_t(it) - F_t(snapshot) + anchor_grad`.
pub fn svrg_direction(
    data: &TransitionDataset,
    t: usize,
    it: &SaddleIterate,
    snapshot: &SaddleIterate,
    anchor_grad: &DVector<f64>,
) -> Result<DVector<f64>> {
    data.check_index(t)?;
    let mut out = anchor_grad.clone();
    let (td_shift, phi_shift) = sample_grad_shift(
        data,
        t,
        it.theta.as_slice(),
        it.omega.as_slice(),
        snapshot.theta.as_slice(),
        snapshot.omega.as_slice(),
    );
    let d = data.dim();
    let (top, bottom) = out.as_mut_slice().split_at_mut(d);
    axpy(td_shift, data.td_features(t), top);
    axpy(phi_shift, data.phi(t), bottom);
    Ok(out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Writes `F_t(theta, omega)` into `out` (length `2d`).
#[inline]
pub(crate) fn sample_grad_into(
    data: &TransitionDataset,
    t: usize,
    theta: &[f64],
    omega: &[f64],
    out: &mut [f64],
) {
    let phi = data.phi(t);
    let td = data.td_features(t);
    let phi_omega = dot(phi, omega);
    let td_theta = dot(td, theta);
    let (top, bottom) = out.split_at_mut(phi.len());
    let scale = td_theta - data.reward(t) + phi_omega;
    for (o, u) in top.iter_mut().zip(td) {
        *o = -u * phi_omega;
    }
    for (o, p) in bottom.iter_mut().zip(phi) {
        *o = p * scale;
    }
}

/// Scalars `(s_td, s_phi)` with `F_t(x) - F_t(y) = (s_td * td, s_phi * phi)`.
#[inline]
pub(crate) fn sample_grad_shift(
    data: &TransitionDataset,
    t: usize,
    theta: &[f64],
    omega: &[f64],
    snap_theta: &[f64],
    snap_omega: &[f64],
) -> (f64, f64) {
    let phi = data.phi(t);
    let td = data.td_features(t);
    let d_phi_omega = dot(phi, omega) - dot(phi, snap_omega);
    let d_td_theta = dot(td, theta) - dot(td, snap_theta);
    (-d_phi_omega, d_td_theta + d_phi_omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_stats, Transition};
    use nalgebra::DMatrix;

    fn identity_stats(b: Vec<f64>) -> ModelStats {
        let d = b.len();
        ModelStats::from_parts(
            DMatrix::identity(d, d),
            DVector::from_vec(b),
            DMatrix::identity(d, d),
        )
        .unwrap()
    }

    fn tiny_dataset() -> TransitionDataset {
        TransitionDataset::new(
            vec![
                Transition::new(vec![1.0, 0.2], vec![0.3, 1.0], 0.5),
                Transition::new(vec![0.1, 0.9], vec![1.0, 0.0], -1.0),
                Transition::new(vec![0.6, 0.6], vec![0.2, 0.4], 2.0),
            ],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn em_mspbe_identity_case() {
        let stats = identity_stats(vec![0.0, 0.0]);
        let theta = DVector::from_vec(vec![3.0, 4.0]);
        assert!((em_mspbe(&stats, &theta).unwrap() - 12.5).abs() < 1e-14);
    }

    #[test]
    fn em_mspbe_needs_pd_covariance() {
        let stats = ModelStats::from_parts(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_diagonal_element(2, 2, 0.0),
        )
        .unwrap();
        assert!(matches!(
            em_mspbe(&stats, &DVector::zeros(2)),
            Err(Error::NonPdCovariance { .. })
        ));
    }

    #[test]
    fn saddle_value_vanishes_at_zero_dual() {
        let stats = build_stats(&tiny_dataset());
        let it = SaddleIterate::new(DVector::from_vec(vec![5.0, -2.0]), DVector::zeros(2)).unwrap();
        assert_eq!(saddle_value(&stats, &it), 0.0);
    }

    #[test]
    fn grad_full_at_origin_is_minus_b() {
        let stats = build_stats(&tiny_dataset());
        let g = grad_full(&stats, &SaddleIterate::zeros(2));
        assert_eq!(g.rows(0, 2).as_slice(), &[0.0, 0.0]);
        assert_eq!(g.rows(2, 2).into_owned(), -&stats.b_hat);
    }

    #[test]
    fn grad_sample_at_origin_is_minus_reward_phi() {
        let data = tiny_dataset();
        let g = grad_sample(&data, 1, &SaddleIterate::zeros(2)).unwrap();
        assert_eq!(g.as_slice(), &[-0.0, -0.0, 0.1, 0.9]);
        assert!(grad_sample(&data, 3, &SaddleIterate::zeros(2)).is_err());
    }

    #[test]
    fn svrg_direction_at_snapshot_is_anchor() {
        let data = tiny_dataset();
        let it = SaddleIterate::new(
            DVector::from_vec(vec![0.3, -0.7]),
            DVector::from_vec(vec![1.1, 0.4]),
        )
        .unwrap();
        let anchor = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let v = svrg_direction(&data, 2, &it, &it, &anchor).unwrap();
        assert_eq!(v, anchor);
    }

    #[test]
    fn svrg_direction_with_zero_anchor_is_gradient_difference() {
        let data = tiny_dataset();
        let it = SaddleIterate::new(
            DVector::from_vec(vec![0.3, -0.7]),
            DVector::from_vec(vec![1.1, 0.4]),
        )
        .unwrap();
        let zero = SaddleIterate::zeros(2);
        let v = svrg_direction(&data, 0, &it, &zero, &DVector::zeros(4)).unwrap();
        let expected = grad_sample(&data, 0, &it).unwrap() - grad_sample(&data, 0, &zero).unwrap();
        assert!((v - expected).amax() < 1e-15);
    }

    #[test]
    fn z_space_roundtrip() {
        let it = SaddleIterate::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![4.0, -8.0]),
        )
        .unwrap();
        let z = it.to_z(16.0);
        assert_eq!(z.as_slice(), &[1.0, 2.0, 1.0, -2.0]);
        assert_eq!(SaddleIterate::from_z(&z, 16.0), it);
    }

    #[test]
    fn iterate_validation() {
        assert!(SaddleIterate::new(DVector::zeros(2), DVector::zeros(3)).is_err());
        assert!(
            SaddleIterate::new(DVector::from_vec(vec![f64::INFINITY]), DVector::zeros(1)).is_err()
        );
    }
}
