//! Random MDPs, behaviour policies and transition collection.

use nalgebra::{DMatrix, DVector, LU};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{DatasetBuilder, TransitionDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Feature dimension; the last feature is the constant 1.
    pub d: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl RandomMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Config(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        if self.d < 2 {
            return Err(Error::Config(
                "feature dimension must be at least 2 (the last feature is the bias)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// One-line description used in dataset file headers.
    pub fn describe(&self) -> String {
        format!(
            "mdp states={} actions={} d={} gamma={} seed={}",
            self.n_states, self.n_actions, self.d, self.gamma, self.seed
        )
    }
}

/// A finite MDP with dense transition tensor, reward table and state features.
#[derive(Debug, Clone)]
pub struct RandomMdp {
    pub spec: RandomMdpSpec,
    /// `P[s][a][s']`, flattened as `(s * n_actions + a) * n_states + s'`.
    transitions: Vec<f64>,
    /// `R[s][a]`, flattened as `s * n_actions + a`.
    rewards: Vec<f64>,
    /// One row per state.
    pub features: DMatrix<f64>,
}

impl RandomMdp {
    pub fn n_states(&self) -> usize {
        self.spec.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.spec.n_states;
        let start = (s * self.spec.n_actions + a) * ns;
        &self.transitions[start..start + ns]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.spec.n_actions + a]
    }

    pub fn phi(&self, s: usize) -> Vec<f64> {
        self.features.row(s).iter().copied().collect()
    }
}

/// A stochastic policy `pi(a | s)`, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub probs: DMatrix<f64>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }
}

/// How transitions are gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Collection {
    /// One continuing trajectory from a uniformly drawn start state.
    #[default]
    Trajectory,
    /// Independent start states drawn from the stationary distribution.
    Iid,
}

/// Samples an MDP whose transition rows, rewards and features are uniform on `[0, 1]`
/// (transition rows normalized), with the last feature pinned to 1.
///
/// Returns the MDP together with the uniformly random behaviour policy.
pub fn generate_mdp(spec: &RandomMdpSpec) -> Result<(RandomMdp, Policy)> {
    spec.validate()?;
    let (ns, na, d) = (spec.n_states, spec.n_actions, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut transitions = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        transitions.extend(row.into_iter().map(|p| p / total));
    }
    let rewards: Vec<f64> = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let mut features = DMatrix::zeros(ns, d);
    for s in 0..ns {
        for j in 0..d - 1 {
            features[(s, j)] = rng.random::<f64>();
        }
        features[(s, d - 1)] = 1.0;
    }
    let mdp = RandomMdp {
        spec: spec.clone(),
        transitions,
        rewards,
        features,
    };
    Ok((mdp, Policy::uniform(ns, na)))
}

/// Trajectory collection of `n` transitions.
pub fn collect_dataset(
    mdp: &RandomMdp,
    policy: &Policy,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    collect_dataset_with(mdp, policy, n, seed, Collection::Trajectory)
}

pub fn collect_dataset_with(
    mdp: &RandomMdp,
    policy: &Policy,
    n: usize,
    seed: u64,
    collection: Collection,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.probs.shape() != (ns, na) {
        return Err(Error::Config("policy shape does not match the MDP".into()));
    }
    let dist_err = |e| Error::Config(format!("invalid probability row: {e}"));
    let next_state = (0..ns * na)
        .map(|k| WeightedIndex::new(mdp.transition_row(k / na, k % na)).map_err(dist_err))
        .collect::<Result<Vec<_>>>()?;
    let action = (0..ns)
        .map(|s| WeightedIndex::new(policy.probs.row(s).iter().copied()).map_err(dist_err))
        .collect::<Result<Vec<_>>>()?;
    let start = match collection {
        Collection::Trajectory => None,
        Collection::Iid => {
            let d = stationary_distribution(mdp, policy)?;
            Some(WeightedIndex::new(d.iter().map(|p| p.max(0.0))).map_err(dist_err)?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = DatasetBuilder::new(mdp.spec.d, mdp.spec.gamma, n)?;
    let mut s = rng.random_range(0..ns);
    for _ in 0..n {
        if let Some(start) = &start {
            s = start.sample(&mut rng);
        }
        let a = action[s].sample(&mut rng);
        let s_next = next_state[s * na + a].sample(&mut rng);
        builder.push(
            mdp.features.row(s).transpose().as_slice(),
            mdp.features.row(s_next).transpose().as_slice(),
            mdp.reward(s, a),
        )?;
        s = s_next;
    }
    builder.finish()
}

/// `P^pi(s' | s) = sum_a pi(a | s) P(s' | s, a)`.
pub fn policy_transition_matrix(mdp: &RandomMdp, policy: &Policy) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = policy.probs[(s, a)];
            for (s2, prob) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += w * prob;
            }
        }
    }
    p
}

/// Expected one-step reward `r^pi(s) = sum_a pi(a | s) R(s, a)`.
pub fn policy_rewards(mdp: &RandomMdp, policy: &Policy) -> DVector<f64> {
    DVector::from_fn(mdp.n_states(), |s, _| {
        (0..mdp.n_actions())
            .map(|a| policy.probs[(s, a)] * mdp.reward(s, a))
            .sum()
    })
}

pub fn stationary_distribution(mdp: &RandomMdp, policy: &Policy) -> Result<DVector<f64>> {
    stationary_of_chain(&policy_transition_matrix(mdp, policy))
}

/// Stationary distribution of a row-stochastic matrix: solves `d P = d`, `sum d = 1`.
pub fn stationary_of_chain(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let ns = p.nrows();
    // (P^T - I) d = 0 with the last equation replaced by sum(d) = 1
    let mut m = p.transpose() - DMatrix::identity(ns, ns);
    m.row_mut(ns - 1).fill(1.0);
    let mut rhs = DVector::zeros(ns);
    rhs[ns - 1] = 1.0;
    let d = LU::new(m).solve(&rhs).ok_or(Error::Reducible {
        residual: f64::INFINITY,
    })?;
    let residual = (p.tr_mul(&d) - &d).amax();
    if !(residual <= 1e-8) || d.iter().any(|v| *v < -1e-12) {
        return Err(Error::Reducible { residual });
    }
    Ok(d)
}

/// Population statistics `A = Phi^T D (I - gamma P) Phi`, `b = Phi^T D r`, `C = Phi^T D Phi`
/// under the stationary distribution of the policy.
pub fn population_stats(
    mdp: &RandomMdp,
    policy: &Policy,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let p = policy_transition_matrix(mdp, policy);
    let dist = stationary_of_chain(&p)?;
    let r = policy_rewards(mdp, policy);
    let phi = &mdp.features;
    let ns = mdp.n_states();
    let dmat = DMatrix::from_diagonal(&dist);
    let phi_t_d = phi.transpose() * &dmat;
    let a = &phi_t_d * (DMatrix::identity(ns, ns) - p * mdp.spec.gamma) * phi;
    let b = &phi_t_d * r;
    let c = phi_t_d * phi;
    Ok((a, b, c))
}

/// Tabular (one-hot) view of an MDP: features are the identity.
pub fn tabular(mut mdp: RandomMdp) -> RandomMdp {
    let ns = mdp.n_states();
    mdp.features = DMatrix::identity(ns, ns);
    mdp.spec.d = ns;
    mdp
}
