//! Transition data and the empirical statistics built from it.
//!
//! For a transition `(phi, phi', r)` and discount `gamma` the per-sample terms are
//!
//! ```text
//! A_t = phi (phi - gamma phi')^T,   b_t = r phi,   C_t = phi phi^T
//! ```
//!
//! They are never materialized per sample; [`SampleFactors`] exposes the
//! rank-1 factors and every per-sample product costs O(d).

mod io;

pub use io::{read_dataset, write_dataset, DatasetHeader};

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn, LU};

use crate::error::{Error, Result};
use crate::linalg;

/// Condition-number estimate above which `A` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// `C` is positive definite when `lambda_min > PD_RELATIVE_TOL * lambda_max`.
pub const PD_RELATIVE_TOL: f64 = 1e-10;

/// One observed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub phi: Vec<f64>,
    pub phi_next: Vec<f64>,
    pub reward: f64,
}

impl Transition {
    pub fn new(phi: Vec<f64>, phi_next: Vec<f64>, reward: f64) -> Self {
        Transition {
            phi,
            phi_next,
            reward,
        }
    }
}

/// `n` transitions sharing a feature dimension and a discount factor.
///
/// Features are stored row-major in flat buffers, together with the
/// temporal-difference features `phi - gamma * phi'` used by every update.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    d: usize,
    gamma: f64,
    phi: Vec<f64>,
    phi_next: Vec<f64>,
    td: Vec<f64>,
    rewards: Vec<f64>,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>, gamma: f64) -> Result<Self> {
        let Some(first) = transitions.first() else {
            return Err(Error::InvalidDataset(
                "dataset must hold at least one transition".into(),
            ));
        };
        let d = first.phi.len();
        let mut builder = DatasetBuilder::new(d, gamma, transitions.len())?;
        for tr in &transitions {
            builder.push(&tr.phi, &tr.phi_next, tr.reward)?;
        }
        builder.finish()
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn phi(&self, t: usize) -> &[f64] {
        &self.phi[t * self.d..(t + 1) * self.d]
    }

    #[inline]
    pub fn phi_next(&self, t: usize) -> &[f64] {
        &self.phi_next[t * self.d..(t + 1) * self.d]
    }

    /// `phi - gamma * phi'` for transition `t`.
    #[inline]
    pub fn td_features(&self, t: usize) -> &[f64] {
        &self.td[t * self.d..(t + 1) * self.d]
    }

    #[inline]
    pub fn reward(&self, t: usize) -> f64 {
        self.rewards[t]
    }

    pub fn transition(&self, t: usize) -> Result<Transition> {
        self.check_index(t)?;
        Ok(Transition::new(
            self.phi(t).to_vec(),
            self.phi_next(t).to_vec(),
            self.reward(t),
        ))
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|t| {
            Transition::new(
                self.phi(t).to_vec(),
                self.phi_next(t).to_vec(),
                self.reward(t),
            )
        })
    }

    pub(crate) fn check_index(&self, t: usize) -> Result<()> {
        if t < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: t,
                len: self.len(),
            })
        }
    }

    /// Appends the transitions of `other`; both datasets must share `d` and `gamma`.
    pub fn concat(&self, other: &TransitionDataset) -> Result<TransitionDataset> {
        if self.d != other.d || self.gamma != other.gamma {
            return Err(Error::InvalidDataset(
                "cannot concatenate datasets with different d or gamma".into(),
            ));
        }
        let mut out = self.clone();
        out.phi.extend_from_slice(&other.phi);
        out.phi_next.extend_from_slice(&other.phi_next);
        out.td.extend_from_slice(&other.td);
        out.rewards.extend_from_slice(&other.rewards);
        Ok(out)
    }
}

/// Incremental, validating constructor for [`TransitionDataset`].
pub(crate) struct DatasetBuilder {
    d: usize,
    gamma: f64,
    phi: Vec<f64>,
    phi_next: Vec<f64>,
    td: Vec<f64>,
    rewards: Vec<f64>,
}

impl DatasetBuilder {
    pub(crate) fn new(d: usize, gamma: f64, capacity: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset(
                "feature dimension must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidDataset(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        Ok(DatasetBuilder {
            d,
            gamma,
            phi: Vec::with_capacity(capacity * d),
            phi_next: Vec::with_capacity(capacity * d),
            td: Vec::with_capacity(capacity * d),
            rewards: Vec::with_capacity(capacity),
        })
    }

    pub(crate) fn push(&mut self, phi: &[f64], phi_next: &[f64], reward: f64) -> Result<()> {
        let t = self.rewards.len();
        if phi.len() != self.d || phi_next.len() != self.d {
            return Err(Error::InvalidDataset(format!(
                "transition {t}: expected feature length {}, got {} and {}",
                self.d,
                phi.len(),
                phi_next.len()
            )));
        }
        if !reward.is_finite() || phi.iter().chain(phi_next).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "transition {t}: non-finite entry"
            )));
        }
        self.phi.extend_from_slice(phi);
        self.phi_next.extend_from_slice(phi_next);
        self.td
            .extend(phi.iter().zip(phi_next).map(|(p, q)| p - self.gamma * q));
        self.rewards.push(reward);
        Ok(())
    }

    pub(crate) fn finish(self) -> Result<TransitionDataset> {
        if self.rewards.is_empty() {
            return Err(Error::InvalidDataset(
                "dataset must hold at least one transition".into(),
            ));
        }
        Ok(TransitionDataset {
            d: self.d,
            gamma: self.gamma,
            phi: self.phi,
            phi_next: self.phi_next,
            td: self.td,
            rewards: self.rewards,
        })
    }
}

/// Rank-1 factors of one sample: `A_t = phi td^T`, `b_t = reward * phi`, `C_t = phi phi^T`.
#[derive(Debug, Clone, Copy)]
pub struct SampleFactors<'a> {
    pub phi: &'a [f64],
    pub td: &'a [f64],
    pub reward: f64,
}

impl SampleFactors<'_> {
    pub fn a_dense(&self) -> DMatrix<f64> {
        let d = self.phi.len();
        DMatrix::from_fn(d, d, |i, j| self.phi[i] * self.td[j])
    }

    pub fn b(&self) -> DVector<f64> {
        DVector::from_iterator(self.phi.len(), self.phi.iter().map(|p| self.reward * p))
    }

    pub fn c_dense(&self) -> DMatrix<f64> {
        let d = self.phi.len();
        DMatrix::from_fn(d, d, |i, j| self.phi[i] * self.phi[j])
    }
}

pub fn per_sample_stats(data: &TransitionDataset, t: usize) -> Result<SampleFactors<'_>> {
    data.check_index(t)?;
    Ok(SampleFactors {
        phi: data.phi(t),
        td: data.td_features(t),
        reward: data.reward(t),
    })
}

/// Aggregate statistics `A`, `b`, `C` and, when `A` is invertible, `theta* = A^-1 b`.
#[derive(Debug, Clone)]
pub struct ModelStats {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub c_hat: DMatrix<f64>,
    pub theta_star: Option<DVector<f64>>,
    a_condition: f64,
    c_eig_min: f64,
    c_eig_max: f64,
    c_factor: Option<Cholesky<f64, Dyn>>,
}

impl ModelStats {
    /// Builds statistics from explicit matrices. `c_hat` is symmetrized.
    pub fn from_parts(
        a_hat: DMatrix<f64>,
        b_hat: DVector<f64>,
        c_hat: DMatrix<f64>,
    ) -> Result<Self> {
        let d = b_hat.len();
        if d == 0 || a_hat.shape() != (d, d) || c_hat.shape() != (d, d) {
            return Err(Error::InvalidDataset(format!(
                "inconsistent shapes: A {:?}, b {}, C {:?}",
                a_hat.shape(),
                d,
                c_hat.shape()
            )));
        }
        let c_hat = (&c_hat + c_hat.transpose()) * 0.5;

        let a_condition = linalg::condition_number(&a_hat);
        let theta_star = if a_condition > SINGULAR_CONDITION {
            None
        } else {
            LU::new(a_hat.clone()).solve(&b_hat)
        };

        let (c_eig_min, c_eig_max) = linalg::sym_extreme_eigenvalues(&c_hat);
        let c_factor = if c_eig_min > PD_RELATIVE_TOL * c_eig_max.abs() && c_eig_max > 0.0 {
            Cholesky::new(c_hat.clone())
        } else {
            None
        };

        Ok(ModelStats {
            a_hat,
            b_hat,
            c_hat,
            theta_star,
            a_condition,
            c_eig_min,
            c_eig_max,
            c_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.b_hat.len()
    }

    pub fn is_singular(&self) -> bool {
        self.theta_star.is_none()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.c_factor.is_some()
    }

    pub fn a_condition(&self) -> f64 {
        self.a_condition
    }

    /// Extreme eigenvalues `(min, max)` of `C`.
    pub fn c_eigen_range(&self) -> (f64, f64) {
        (self.c_eig_min, self.c_eig_max)
    }

    pub fn theta_star(&self) -> Result<&DVector<f64>> {
        self.theta_star.as_ref().ok_or(Error::SingularModel {
            condition: self.a_condition,
        })
    }

    pub fn require_pd(&self) -> Result<()> {
        if self.is_positive_definite() {
            Ok(())
        } else {
            Err(self.non_pd_error())
        }
    }

    /// Solves `C y = rhs` with the cached Cholesky factor.
    pub fn solve_c(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.c_factor {
            Some(chol) => Ok(chol.solve(rhs)),
            None => Err(self.non_pd_error()),
        }
    }

    /// Solves `C Y = rhs` column by column.
    pub fn solve_c_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.c_factor {
            Some(chol) => Ok(chol.solve(rhs)),
            None => Err(self.non_pd_error()),
        }
    }

    fn non_pd_error(&self) -> Error {
        Error::NonPdCovariance {
            min_eig: self.c_eig_min,
            max_eig: self.c_eig_max,
        }
    }
}

/// Averages the per-sample statistics over the dataset.
///
/// Accumulation runs sequentially over `t` with rank-1 updates so results
/// are bit-reproducible. Singular `A` or indefinite `C` are recorded on the
/// returned value, not reported as errors.
pub fn build_stats(data: &TransitionDataset) -> ModelStats {
    let d = data.dim();
    let n = data.len();
    let mut a = DMatrix::zeros(d, d);
    let mut c = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for t in 0..n {
        let phi = DVectorView::from_slice(data.phi(t), d);
        let td = DVectorView::from_slice(data.td_features(t), d);
        a.ger(1.0, &phi, &td, 1.0);
        c.ger(1.0, &phi, &phi, 1.0);
        b.axpy(data.reward(t), &phi, 1.0);
    }
    let inv_n = 1.0 / n as f64;
    a *= inv_n;
    b *= inv_n;
    c *= inv_n;
    ModelStats::from_parts(a, b, c).expect("shapes are consistent by construction")
}
