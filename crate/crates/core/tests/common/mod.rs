//! Shared fixtures and dense-matrix oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrpe::{
    build_stats, collect_dataset, generate_mdp, ModelStats, RandomMdpSpec, Transition,
    TransitionDataset,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` transitions with features uniform on `[0, 1]` and a trailing bias feature.
pub fn random_dataset(d: usize, n: usize, gamma: f64, seed: u64) -> TransitionDataset {
    let mut r = rng(seed);
    let feat = |r: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
        v[d - 1] = 1.0;
        v
    };
    let transitions = (0..n)
        .map(|_| {
            let phi = feat(&mut r);
            let phi_next = feat(&mut r);
            Transition::new(phi, phi_next, r.random::<f64>())
        })
        .collect();
    TransitionDataset::new(transitions, gamma).unwrap()
}

/// Random-MDP trajectory data.
pub fn mdp_dataset(
    states: usize,
    actions: usize,
    d: usize,
    n: usize,
    seed: u64,
) -> TransitionDataset {
    let spec = RandomMdpSpec {
        n_states: states,
        n_actions: actions,
        d,
        gamma: 0.95,
        seed,
    };
    let (mdp, policy) = generate_mdp(&spec).unwrap();
    collect_dataset(&mdp, &policy, n, seed + 1).unwrap()
}

/// Scaled one-hot features cycling through the coordinates with a random
/// successor and reward; `C = I` exactly when `n` is a multiple of `d`.
/// Well conditioned, so the theoretical epoch length stays small.
pub fn orthogonal_dataset(d: usize, n: usize, gamma: f64, seed: u64) -> TransitionDataset {
    let mut r = rng(seed);
    let scale = (d as f64).sqrt();
    let basis = |i: usize| {
        let mut v = vec![0.0; d];
        v[i] = scale;
        v
    };
    let transitions = (0..n)
        .map(|t| Transition::new(basis(t % d), basis(r.random_range(0..d)), r.random::<f64>()))
        .collect();
    TransitionDataset::new(transitions, gamma).unwrap()
}

pub fn col(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Literal per-sample matrices `A_t = phi (phi - gamma phi')^T`, `b_t = r phi`, `C_t = phi phi^T`.
pub fn dense_sample(
    data: &TransitionDataset,
    t: usize,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let d = data.dim();
    let phi = data.phi(t);
    let next = data.phi_next(t);
    let g = data.gamma();
    let a = DMatrix::from_fn(d, d, |i, j| phi[i] * (phi[j] - g * next[j]));
    let b = DVector::from_fn(d, |i, _| data.reward(t) * phi[i]);
    let c = DMatrix::from_fn(d, d, |i, j| phi[i] * phi[j]);
    (a, b, c)
}

pub fn dense_stats(data: &TransitionDataset) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let d = data.dim();
    let (mut a, mut b, mut c) = (
        DMatrix::zeros(d, d),
        DVector::zeros(d),
        DMatrix::zeros(d, d),
    );
    for t in 0..data.len() {
        let (at, bt, ct) = dense_sample(data, t);
        a += at;
        b += bt;
        c += ct;
    }
    let n = data.len() as f64;
    (a / n, b / n, c / n)
}

/// `F_t = (-A_t^T w, A_t th - b_t + C_t w)` from dense per-sample matrices.
pub fn dense_grad_sample(
    data: &TransitionDataset,
    t: usize,
    theta: &DVector<f64>,
    omega: &DVector<f64>,
) -> DVector<f64> {
    let (a, b, c) = dense_sample(data, t);
    let top = -(a.transpose() * omega);
    let bottom = &a * theta - b + c * omega;
    let d = theta.len();
    DVector::from_fn(2 * d, |i, _| if i < d { top[i] } else { bottom[i - d] })
}

/// Per-sample `(G_t, g_t)` assembled densely.
pub fn dense_g_sample(
    data: &TransitionDataset,
    t: usize,
    beta: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = data.dim();
    let (a, b, c) = dense_sample(data, t);
    let sb = beta.sqrt();
    let mut g = DMatrix::zeros(2 * d, 2 * d);
    g.view_mut((0, d), (d, d)).copy_from(&(-sb * a.transpose()));
    g.view_mut((d, 0), (d, d)).copy_from(&(sb * &a));
    g.view_mut((d, d), (d, d)).copy_from(&(beta * c));
    let mut gv = DVector::zeros(2 * d);
    gv.rows_mut(d, d).copy_from(&(sb * b));
    (g, gv)
}

/// `|| (1/n) sum G_t^T G_t ||_2`.
pub fn dense_l_g_sq(data: &TransitionDataset, beta: f64) -> f64 {
    let d = data.dim();
    let mut acc = DMatrix::zeros(2 * d, 2 * d);
    for t in 0..data.len() {
        let (g, _) = dense_g_sample(data, t, beta);
        acc += g.transpose() * g;
    }
    acc /= data.len() as f64;
    acc.singular_values().max()
}

/// `(1/n) sum || G_t z* - g_t ||^2`.
pub fn dense_h(data: &TransitionDataset, theta_star: &DVector<f64>, beta: f64) -> f64 {
    let d = data.dim();
    let z = DVector::from_fn(2 * d, |i, _| if i < d { theta_star[i] } else { 0.0 });
    (0..data.len())
        .map(|t| {
            let (g, gv) = dense_g_sample(data, t, beta);
            (g * &z - gv).norm_squared()
        })
        .sum::<f64>()
        / data.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn stats_of(data: &TransitionDataset) -> ModelStats {
    build_stats(data)
}

pub fn random_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * (2.0 * r.random::<f64>() - 1.0))
}
