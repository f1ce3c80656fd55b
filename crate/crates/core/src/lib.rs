//! Stochastic solvers for linear policy evaluation.
//!
//! The empirical mean squared projected Bellman error is minimized through its
//! convex-concave saddle-point form
//!
//! ```text
//! min_theta max_omega  <b - A theta, omega> - 1/2 |omega|^2_C
//! ```
//!
//! which is a finite sum over transitions. This crate provides:
//!
//! * [`model`]: transition datasets and the empirical statistics `A`, `b`, `C`
//!   with O(d) per-sample access through rank-1 factors.
//! * [`objective`]: the objective, the saddle function and its stacked
//!   gradient field `F`.
//! * [`spectral`]: the rescaled `z = (theta, omega / sqrt(beta))` system, the
//!   eigen-decomposition of `G`, and the theoretical step sizes derived from it.
//! * [`solvers`]: GTD2, SVRG, Batching SVRG and SCSG together with the direct
//!   (LSTD) solution used as ground truth.
//! * [`envs`]: random MDP generation and data collection.
//! * [`harness`]: configuration, experiment orchestration, trace files and
//!   reports used by the `vrpe` command line tool.

// `!(x > 0.0)` style checks are how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod error;
pub mod harness;
mod linalg;
pub mod model;
pub mod objective;
pub mod solvers;
pub mod spectral;

pub use envs::{
    collect_dataset, generate_mdp, stationary_distribution, Collection, Policy, RandomMdp,
    RandomMdpSpec,
};
pub use error::{Error, Result};
pub use harness::{
    grid_select, load_experiment, report, run_experiment, ExperimentConfig, ExperimentOutcome,
    Report,
};
pub use model::{
    build_stats, per_sample_stats, ModelStats, SampleFactors, Transition, TransitionDataset,
};
pub use objective::{
    em_mspbe, grad_full, grad_sample, saddle_value, svrg_direction, SaddleIterate,
};
pub use solvers::{
    batching_svrg, geom_epoch_len, gtd2, schedule_next, scsg, solve_direct, svrg_pe, BatchSchedule,
    RecordCadence, SolverConfig, SolverKind, SolverTrace, TraceRecord,
};
pub use spectral::{analyze, build_g, complexity_measure, compute_beta, potential, SpectralInfo};
