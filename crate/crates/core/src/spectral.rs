//! Spectral analysis of the rescaled saddle system.
//!
//! With `sigma_omega = beta * sigma_theta` the inner update of every solver is a
//! step on `z = (theta, omega / sqrt(beta))`:
//!
//! ```text
//! G_t = [ 0              -sqrt(beta) A_t^T ]     g_t = [ 0                ]
//!       [ sqrt(beta) A_t  beta C_t         ]           [ sqrt(beta) b_t   ]
//! ```
//!
//! Choosing `beta = 8 lambda_max(A^T C^-1 A) / lambda_min(C)` makes the averaged
//! matrix `G` diagonalizable with a real positive spectrum, `G = Q Lambda Q^-1`.
//! The quantities `kappa(Q)`, `lambda_min(G)` and
//! `L_G^2 = |1/n sum_t G_t^T G_t|` then fix the theoretical step size
//! `sigma_theta = lambda_min / (6 kappa(Q)^2 L_G^2)` and epoch length
//! `K = 2 / (sigma_theta lambda_min)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelStats, TransitionDataset};
use crate::objective::SaddleIterate;

/// Imaginary parts up to `SPECTRUM_TOL * |G|` are treated as rounding noise.
pub const SPECTRUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub beta: f64,
    pub g_matrix: DMatrix<f64>,
    pub g_vector: DVector<f64>,
    /// Eigenvectors of `G` as unit-norm columns.
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub kappa_q: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub l_g: f64,
    pub sigma_theta: f64,
    pub sigma_omega: f64,
    /// Theoretical inner-loop length, rounded up.
    pub k_epochlen: u64,
    pub z_star: DVector<f64>,
    /// Complexity measure `H`.
    pub complexity: f64,
    pub g_norm: f64,
    pub max_imag: f64,
    /// `|G - Q Lambda Q^-1| / |G|`.
    pub reconstruction_error: f64,
}

impl SpectralInfo {
    /// Smallest SCSG batch size covered by the contraction guarantee, `4 / (sigma_theta lambda_min)`.
    pub fn min_scsg_batch(&self) -> f64 {
        4.0 / (self.sigma_theta * self.lambda_min)
    }

    /// Accuracy floor `3 sigma kappa^2 H / (lambda_min (B sigma lambda_min - 2))` of SCSG with batch `b`.
    ///
    /// Infinite when `b` is below the `2 / (sigma_theta lambda_min)` threshold.
    pub fn scsg_floor(&self, b: f64) -> f64 {
        let margin = b * self.sigma_theta * self.lambda_min - 2.0;
        if margin <= 0.0 {
            return f64::INFINITY;
        }
        3.0 * self.sigma_theta * self.kappa_q.powi(2) * self.complexity / (self.lambda_min * margin)
    }

    /// Per-epoch contraction factor `4 / (3 B sigma lambda_min) + 1/3` of SCSG with batch `b`.
    pub fn scsg_rate(&self, b: f64) -> f64 {
        4.0 / (3.0 * b * self.sigma_theta * self.lambda_min) + 1.0 / 3.0
    }
}

pub fn compute_beta(stats: &ModelStats) -> Result<f64> {
    stats.require_pd()?;
    stats.theta_star()?;
    let c_inv_a = stats.solve_c_matrix(&stats.a_hat)?;
    let m = stats.a_hat.tr_mul(&c_inv_a);
    let m = (&m + m.transpose()) * 0.5;
    let (_, lambda_max) = linalg::sym_extreme_eigenvalues(&m);
    let (c_min, _) = stats.c_eigen_range();
    Ok(8.0 * lambda_max / c_min)
}

/// Assembles `G` and `g`.
pub fn build_g(stats: &ModelStats, beta: f64) -> (DMatrix<f64>, DVector<f64>) {
    let d = stats.dim();
    let sb = beta.sqrt();
    let mut g = DMatrix::zeros(2 * d, 2 * d);
    g.view_mut((0, d), (d, d))
        .copy_from(&(stats.a_hat.transpose() * -sb));
    g.view_mut((d, 0), (d, d)).copy_from(&(&stats.a_hat * sb));
    g.view_mut((d, d), (d, d)).copy_from(&(&stats.c_hat * beta));
    let mut v = DVector::zeros(2 * d);
    v.rows_mut(d, d).copy_from(&(&stats.b_hat * sb));
    (g, v)
}

/// `1/n sum_t G_t^T G_t`.
///
/// With `u = phi - gamma phi'` each `G_t` is the rank-2 matrix
/// `a1 b1^T + a2 b2^T` with `a1 = (-sqrt(beta) u, 0)`, `b1 = (0, phi)`,
/// `a2 = (0, phi)` and `b2 = (sqrt(beta) u, beta phi)`. Since `a1 . a2 = 0`,
/// `G_t^T G_t = beta |u|^2 b1 b1^T + |phi|^2 b2 b2^T`, so the sum reduces to
/// three weighted Gram matrices.
pub fn gram_of_g(data: &TransitionDataset, beta: f64) -> DMatrix<f64> {
    let d = data.dim();
    let n = data.len();
    let sb = beta.sqrt();
    let mut uu = DMatrix::zeros(d, d);
    let mut uphi = DMatrix::zeros(d, d);
    let mut phiphi = DMatrix::zeros(d, d);
    // chunked so the temporaries stay small for large n
    const CHUNK: usize = 2048;
    for start in (0..n).step_by(CHUNK) {
        let rows = CHUNK.min(n - start);
        let phi = DMatrix::from_fn(rows, d, |i, j| data.phi(start + i)[j]);
        let u = DMatrix::from_fn(rows, d, |i, j| data.td_features(start + i)[j]);
        let mut u_w = u.clone();
        let mut phi_w = phi.clone();
        for i in 0..rows {
            let t = start + i;
            let phi_sq = crate::objective::dot(data.phi(t), data.phi(t));
            let u_sq = crate::objective::dot(data.td_features(t), data.td_features(t));
            u_w.row_mut(i).scale_mut(phi_sq);
            phi_w
                .row_mut(i)
                .scale_mut(beta * u_sq + beta * beta * phi_sq);
        }
        uu.gemm_tr(1.0, &u_w, &u, 1.0);
        uphi.gemm_tr(1.0, &u_w, &phi, 1.0);
        phiphi.gemm_tr(1.0, &phi_w, &phi, 1.0);
    }
    let inv_n = 1.0 / n as f64;
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d))
        .copy_from(&(uu * (beta * inv_n)));
    let off = uphi * (beta * sb * inv_n);
    out.view_mut((d, 0), (d, d)).copy_from(&off.transpose());
    out.view_mut((0, d), (d, d)).copy_from(&off);
    out.view_mut((d, d), (d, d)).copy_from(&(phiphi * inv_n));
    out
}

/// `L_G`, the square root of the spectral norm of [`gram_of_g`].
pub fn smoothness(data: &TransitionDataset, beta: f64) -> f64 {
    let gram = gram_of_g(data, beta);
    let gram = (&gram + gram.transpose()) * 0.5;
    linalg::sym_extreme_eigenvalues(&gram).1.max(0.0).sqrt()
}

/// `H = 1/n sum_t |G_t z* - g_t|^2`.
///
/// At `z* = (theta*, 0)` the per-sample residual is `sqrt(beta) phi (u . theta* - r)`.
pub fn complexity_measure(data: &TransitionDataset, stats: &ModelStats, beta: f64) -> Result<f64> {
    let theta_star = stats.theta_star()?;
    let ts = theta_star.as_slice();
    let total: f64 = (0..data.len())
        .map(|t| {
            let phi = data.phi(t);
            let resid = crate::objective::dot(data.td_features(t), ts) - data.reward(t);
            beta * crate::objective::dot(phi, phi) * resid * resid
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Full spectral analysis with theoretical hyperparameters.
pub fn analyze(data: &TransitionDataset, stats: &ModelStats) -> Result<SpectralInfo> {
    let beta = compute_beta(stats)?;
    let (g_matrix, g_vector) = build_g(stats, beta);
    let g_norm = linalg::spectral_norm(&g_matrix);
    let tolerance = SPECTRUM_TOL * g_norm;

    let eig =
        linalg::real_eigen(&g_matrix, tolerance).map_err(|max_imag| Error::ComplexSpectrum {
            max_imag,
            tolerance,
        })?;
    let lambda_min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_max = eig.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = eig.vectors;
    let Some(q_inv) = q.clone().try_inverse() else {
        return Err(Error::DefectiveSpectrum {
            residual: f64::INFINITY,
            min_real: lambda_min,
        });
    };
    let rebuilt = &q * DMatrix::from_diagonal(&eig.values) * &q_inv;
    let reconstruction_error = linalg::spectral_norm(&(rebuilt - &g_matrix)) / g_norm;
    if !(reconstruction_error <= SPECTRUM_TOL) || !(lambda_min > 0.0) {
        return Err(Error::DefectiveSpectrum {
            residual: reconstruction_error,
            min_real: lambda_min,
        });
    }
    let (q_max, q_min) = linalg::singular_extremes(&q);
    let kappa_q = (q_max / q_min).max(1.0);

    let l_g = smoothness(data, beta);
    let sigma_theta = lambda_min / (6.0 * kappa_q * kappa_q * l_g * l_g);
    let sigma_omega = beta * sigma_theta;
    let k_real = (2.0 / (sigma_theta * lambda_min)).ceil();
    let k_epochlen = if k_real >= u64::MAX as f64 {
        u64::MAX
    } else {
        k_real as u64
    };

    let d = stats.dim();
    let mut z_star = DVector::zeros(2 * d);
    z_star.rows_mut(0, d).copy_from(stats.theta_star()?);
    let complexity = complexity_measure(data, stats, beta)?;

    Ok(SpectralInfo {
        beta,
        g_matrix,
        g_vector,
        q,
        q_inv,
        eigenvalues: eig.values,
        kappa_q,
        lambda_min,
        lambda_max,
        l_g,
        sigma_theta,
        sigma_omega,
        k_epochlen,
        z_star,
        complexity,
        g_norm,
        max_imag: eig.max_imag,
        reconstruction_error,
    })
}

/// `|Q^-1 (z - z*)|^2` with `z = (theta, omega / sqrt(beta))`.
pub fn potential(info: &SpectralInfo, it: &SaddleIterate) -> f64 {
    let delta = it.to_z(info.beta) - &info.z_star;
    (&info.q_inv * delta).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_from(a: DMatrix<f64>, b: Vec<f64>, c: DMatrix<f64>) -> ModelStats {
        ModelStats::from_parts(a, DVector::from_vec(b), c).unwrap()
    }

    #[test]
    fn beta_for_identity_model_is_eight() {
        for d in 1..5 {
            let stats = stats_from(
                DMatrix::identity(d, d),
                vec![1.0; d],
                DMatrix::identity(d, d),
            );
            assert!((compute_beta(&stats).unwrap() - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_for_scaled_identities() {
        let (a, c) = (1.7, 0.3);
        let stats = stats_from(
            DMatrix::identity(3, 3) * a,
            vec![1.0; 3],
            DMatrix::identity(3, 3) * c,
        );
        let expected = 8.0 * a * a / (c * c);
        assert!((compute_beta(&stats).unwrap() - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn beta_requires_assumptions() {
        let singular = stats_from(
            DMatrix::zeros(2, 2),
            vec![1.0, 1.0],
            DMatrix::identity(2, 2),
        );
        assert!(matches!(
            compute_beta(&singular),
            Err(Error::SingularModel { .. })
        ));
        let indefinite = stats_from(
            DMatrix::identity(2, 2),
            vec![1.0, 1.0],
            DMatrix::from_diagonal_element(2, 2, 0.0),
        );
        assert!(matches!(
            compute_beta(&indefinite),
            Err(Error::NonPdCovariance { .. })
        ));
    }

    #[test]
    fn g_is_skew_without_covariance() {
        // beta = 1, A = I, C = 0: G = [[0, -I], [I, 0]] has eigenvalues +-i.
        let stats = stats_from(
            DMatrix::identity(2, 2),
            vec![1.0, 1.0],
            DMatrix::zeros(2, 2),
        );
        let (g, _) = build_g(&stats, 1.0);
        assert_eq!(&g + g.transpose(), DMatrix::zeros(4, 4));
        let eig = g.complex_eigenvalues();
        for l in eig.iter() {
            assert!(l.re.abs() < 1e-14 && (l.im.abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn optimum_solves_g_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let stats = stats_from(a, vec![1.0, -2.0], c);
        let beta = compute_beta(&stats).unwrap();
        let (g, gv) = build_g(&stats, beta);
        let mut z = DVector::zeros(4);
        z.rows_mut(0, 2).copy_from(stats.theta_star().unwrap());
        assert!((g * z - gv).amax() < 1e-12);
    }
}
