//! Iterative solvers for the saddle problem and the direct solution used as ground truth.
//!
//! All variance-reduced methods share one epoch structure:
//!
//! 1. snapshot `(theta~, omega~)` and compute an anchor gradient `mu` over a
//!    mini-batch drawn without replacement,
//! 2. run an inner loop of single-sample steps along
//!    `v = F_t(theta, omega) - F_t(theta~, omega~) + mu`,
//!    each step scaled by `diag(sigma_theta, sigma_omega)`.
//!
//! SVRG uses the whole dataset as batch, Batching SVRG follows a
//! [`BatchSchedule`], and SCSG uses a fixed batch with a geometric inner
//! length of mean `B`. GTD2 takes plain single-sample steps.

mod schedule;

pub(crate) use schedule::ceil_tolerant;
pub use schedule::{estimate_xi_sq, geom_epoch_len, schedule_next, BatchSchedule};

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelStats, TransitionDataset};
use crate::objective::{em_mspbe, sample_grad_into, sample_grad_shift, SaddleIterate};
use crate::spectral::{potential, SpectralInfo};

/// Iterate norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
const DIVERGENCE_CHECK_EVERY: u64 = 4096;

// RNG stream ids; one ChaCha stream per source of randomness.
const STREAM_BATCH: u64 = 0;
const STREAM_INDEX: u64 = 1;
const STREAM_LENGTH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    Gtd2,
    Svrg,
    BatchingSvrg,
    Scsg,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Gtd2 => "gtd2",
            SolverKind::Svrg => "svrg",
            SolverKind::BatchingSvrg => "batching_svrg",
            SolverKind::Scsg => "scsg",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gtd2" => Ok(SolverKind::Gtd2),
            "svrg" => Ok(SolverKind::Svrg),
            "batching_svrg" | "bsvrg" | "batching" => Ok(SolverKind::BatchingSvrg),
            "scsg" => Ok(SolverKind::Scsg),
            other => Err(Error::Config(format!("unknown solver kind `{other}`"))),
        }
    }
}

/// When trace rows are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordCadence {
    /// Once at start and after every epoch.
    PerEpoch,
    /// Once at start and whenever `samples_touched` crosses a multiple of the given count.
    PerSamples(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub sigma_theta: f64,
    pub sigma_omega: f64,
    pub epochs: usize,
    /// Inner-loop length `K` for SVRG and Batching SVRG; epoch length for GTD2.
    pub inner_len: u64,
    /// Fixed anchor batch size `B` for SCSG.
    pub batch_size: usize,
    /// Anchor schedule for Batching SVRG.
    pub schedule: BatchSchedule,
    pub seed: u64,
    pub record_potential: bool,
    pub cadence: RecordCadence,
    /// Stop as soon as this many per-sample gradients have been evaluated.
    pub max_samples: Option<u64>,
    /// Starting point; zero vectors when absent.
    pub init: Option<SaddleIterate>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            sigma_theta: 1e-3,
            sigma_omega: 1e-3,
            epochs: 10,
            inner_len: 1000,
            batch_size: 100,
            schedule: BatchSchedule::Fixed(100),
            seed: 0,
            record_potential: false,
            cadence: RecordCadence::PerEpoch,
            max_samples: None,
            init: None,
        }
    }
}

impl SolverConfig {
    /// Copies the step sizes and epoch length from a spectral analysis.
    pub fn with_theory(mut self, info: &SpectralInfo) -> Self {
        self.sigma_theta = info.sigma_theta;
        self.sigma_omega = info.sigma_omega;
        self.inner_len = info.k_epochlen;
        self
    }

    pub fn validate(&self, kind: SolverKind, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sigma_theta >= 0.0 && self.sigma_theta.is_finite()) {
            return bad(format!(
                "sigma_theta must be finite and non-negative, got {}",
                self.sigma_theta
            ));
        }
        if !(self.sigma_omega >= 0.0 && self.sigma_omega.is_finite()) {
            return bad(format!(
                "sigma_omega must be finite and non-negative, got {}",
                self.sigma_omega
            ));
        }
        if let RecordCadence::PerSamples(0) = self.cadence {
            return bad("record cadence must be positive".into());
        }
        match kind {
            SolverKind::Scsg if self.batch_size == 0 || self.batch_size > n => bad(format!(
                "SCSG batch size must lie in [1, {n}], got {}",
                self.batch_size
            )),
            SolverKind::BatchingSvrg => self.schedule.validate().map_err(Error::Config),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Completed epochs at the time of the record.
    pub epoch: usize,
    pub samples_touched: u64,
    pub em_mspbe: f64,
    pub dist_theta_sq: f64,
    pub potential: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub solver: SolverKind,
    pub config: SolverConfig,
    pub records: Vec<TraceRecord>,
    pub final_iterate: SaddleIterate,
    /// Per-sample gradients spent on anchors (a subset of `samples_touched`).
    pub anchor_samples: u64,
    pub epochs_run: usize,
}

impl SolverTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("traces always hold the initial record")
    }

    pub fn samples_touched(&self) -> u64 {
        self.last().samples_touched
    }
}

/// `(theta*, 0)`.
pub fn solve_direct(stats: &ModelStats) -> Result<SaddleIterate> {
    let theta = stats.theta_star()?.clone();
    let d = theta.len();
    Ok(SaddleIterate {
        theta,
        omega: DVector::zeros(d),
    })
}

/// Runs the solver named by `kind`.
pub fn run(
    kind: SolverKind,
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
) -> Result<SolverTrace> {
    match kind {
        SolverKind::Gtd2 => gtd2(data, stats, cfg, spectral),
        SolverKind::Svrg => svrg_pe(data, stats, cfg, spectral),
        SolverKind::BatchingSvrg => batching_svrg(data, stats, cfg, spectral),
        SolverKind::Scsg => scsg(data, stats, cfg, spectral),
    }
}

/// GTD2: `M * K` single-sample steps `x <- x - diag(sigma_theta, sigma_omega) F_t(x)`.
pub fn gtd2(
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
) -> Result<SolverTrace> {
    cfg.validate(SolverKind::Gtd2, data.len())?;
    let mut run = Run::start(SolverKind::Gtd2, data, stats, cfg, spectral)?;
    let n = data.len();
    let d = data.dim();
    let mut grad = vec![0.0; 2 * d];
    'outer: for m in 0..cfg.epochs {
        for j in 0..cfg.inner_len {
            if run.budget_spent() {
                break 'outer;
            }
            let t = run.index_rng.random_range(0..n);
            sample_grad_into(data, t, &run.theta, &run.omega, &mut grad);
            let (g_theta, g_omega) = grad.split_at(d);
            for (x, g) in run.theta.iter_mut().zip(g_theta) {
                *x -= cfg.sigma_theta * g;
            }
            for (x, g) in run.omega.iter_mut().zip(g_omega) {
                *x -= cfg.sigma_omega * g;
            }
            run.touch(1, m)?;
            if (j + 1) % DIVERGENCE_CHECK_EVERY == 0 {
                run.check_divergence(m)?;
            }
        }
        run.finish_epoch(m)?;
    }
    run.into_trace()
}

/// SVRG with the full-dataset anchor every epoch.
pub fn svrg_pe(
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
) -> Result<SolverTrace> {
    cfg.validate(SolverKind::Svrg, data.len())?;
    let n = data.len();
    let inner = cfg.inner_len;
    variance_reduced(SolverKind::Svrg, data, stats, cfg, spectral, |_, _| {
        (n, inner)
    })
}

/// Batching SVRG: anchor over `B_m` samples drawn per the schedule, `K` inner steps.
pub fn batching_svrg(
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
) -> Result<SolverTrace> {
    cfg.validate(SolverKind::BatchingSvrg, data.len())?;
    let n = data.len();
    let inner = cfg.inner_len;
    let schedule = cfg.schedule.clone();
    variance_reduced(
        SolverKind::BatchingSvrg,
        data,
        stats,
        cfg,
        spectral,
        move |m, _| (schedule_next(&schedule, m, n), inner),
    )
}

/// SCSG: fixed anchor batch `B`, inner length `K_m ~ Geom` with mean `B`.
pub fn scsg(
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
) -> Result<SolverTrace> {
    cfg.validate(SolverKind::Scsg, data.len())?;
    let b = cfg.batch_size;
    variance_reduced(
        SolverKind::Scsg,
        data,
        stats,
        cfg,
        spectral,
        move |_, rng| (b, geom_epoch_len(rng, b as u64)),
    )
}

/// Shared epoch loop; `plan(m, length_rng)` returns `(batch size, inner length)` for epoch `m`.
fn variance_reduced(
    kind: SolverKind,
    data: &TransitionDataset,
    stats: &ModelStats,
    cfg: &SolverConfig,
    spectral: Option<&SpectralInfo>,
    mut plan: impl FnMut(usize, &mut ChaCha8Rng) -> (usize, u64),
) -> Result<SolverTrace> {
    let mut run = Run::start(kind, data, stats, cfg, spectral)?;
    let n = data.len();
    let d = data.dim();
    let (st, so) = (cfg.sigma_theta, cfg.sigma_omega);
    let mut anchor = vec![0.0; 2 * d];
    let mut grad = vec![0.0; 2 * d];

    'outer: for m in 0..cfg.epochs {
        if run.budget_spent() {
            break;
        }
        let (batch, inner) = plan(m, &mut run.length_rng);
        let snap_theta = run.theta.clone();
        let snap_omega = run.omega.clone();

        anchor.iter_mut().for_each(|a| *a = 0.0);
        let mut accumulate = |t: usize| {
            sample_grad_into(data, t, &snap_theta, &snap_omega, &mut grad);
            for (a, g) in anchor.iter_mut().zip(&grad) {
                *a += g;
            }
        };
        if batch >= n {
            (0..n).for_each(&mut accumulate);
        } else {
            rand::seq::index::sample(&mut run.batch_rng, n, batch)
                .into_iter()
                .for_each(&mut accumulate);
        }
        let inv_b = 1.0 / batch.min(n) as f64;
        anchor.iter_mut().for_each(|a| *a *= inv_b);
        run.anchor_samples += batch.min(n) as u64;
        run.touch(batch.min(n) as u64, m)?;
        debug!("{kind} epoch {m}: batch {batch}, inner {inner}");

        let (mu_theta, mu_omega) = anchor.split_at(d);
        for j in 0..inner {
            if run.budget_spent() {
                break 'outer;
            }
            let t = run.index_rng.random_range(0..n);
            let (s_td, s_phi) =
                sample_grad_shift(data, t, &run.theta, &run.omega, &snap_theta, &snap_omega);
            let td = data.td_features(t);
            let phi = data.phi(t);
            for ((x, mu), u) in run.theta.iter_mut().zip(mu_theta).zip(td) {
                *x -= st * (mu + s_td * u);
            }
            for ((x, mu), p) in run.omega.iter_mut().zip(mu_omega).zip(phi) {
                *x -= so * (mu + s_phi * p);
            }
            run.touch(1, m)?;
            if (j + 1) % DIVERGENCE_CHECK_EVERY == 0 {
                run.check_divergence(m)?;
            }
        }
        run.finish_epoch(m)?;
    }
    run.into_trace()
}

/// Mutable state of one solver run plus its trace bookkeeping.
struct Run<'a> {
    kind: SolverKind,
    cfg: &'a SolverConfig,
    stats: &'a ModelStats,
    theta_star: &'a DVector<f64>,
    spectral: Option<&'a SpectralInfo>,
    theta: Vec<f64>,
    omega: Vec<f64>,
    touched: u64,
    anchor_samples: u64,
    next_mark: u64,
    epochs_run: usize,
    records: Vec<TraceRecord>,
    batch_rng: ChaCha8Rng,
    index_rng: ChaCha8Rng,
    length_rng: ChaCha8Rng,
}

impl<'a> Run<'a> {
    fn start(
        kind: SolverKind,
        data: &TransitionDataset,
        stats: &'a ModelStats,
        cfg: &'a SolverConfig,
        spectral: Option<&'a SpectralInfo>,
    ) -> Result<Self> {
        let theta_star = stats.theta_star()?;
        stats.require_pd()?;
        let d = data.dim();
        if stats.dim() != d {
            return Err(Error::InvalidDataset(format!(
                "statistics have dimension {} but dataset has {d}",
                stats.dim()
            )));
        }
        let (theta, omega) = match &cfg.init {
            Some(it) if it.dim() != d => {
                return Err(Error::Config(format!(
                    "initial iterate has dimension {}, expected {d}",
                    it.dim()
                )))
            }
            Some(it) => (it.theta.as_slice().to_vec(), it.omega.as_slice().to_vec()),
            None => (vec![0.0; d], vec![0.0; d]),
        };
        let stream = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(id);
            rng
        };
        let next_mark = match cfg.cadence {
            RecordCadence::PerSamples(step) => step,
            RecordCadence::PerEpoch => u64::MAX,
        };
        let mut run = Run {
            kind,
            cfg,
            stats,
            theta_star,
            spectral: if cfg.record_potential { spectral } else { None },
            theta,
            omega,
            touched: 0,
            anchor_samples: 0,
            next_mark,
            epochs_run: 0,
            records: Vec::new(),
            batch_rng: stream(STREAM_BATCH),
            index_rng: stream(STREAM_INDEX),
            length_rng: stream(STREAM_LENGTH),
        };
        run.record(0)?;
        Ok(run)
    }

    fn iterate(&self) -> SaddleIterate {
        SaddleIterate {
            theta: DVector::from_column_slice(&self.theta),
            omega: DVector::from_column_slice(&self.omega),
        }
    }

    fn record(&mut self, epoch: usize) -> Result<()> {
        let it = self.iterate();
        let em = em_mspbe(self.stats, &it.theta)?;
        let dist = (&it.theta - self.theta_star).norm_squared();
        let pot = self.spectral.map(|info| potential(info, &it));
        self.records.push(TraceRecord {
            epoch,
            samples_touched: self.touched,
            em_mspbe: em,
            dist_theta_sq: dist,
            potential: pot,
        });
        Ok(())
    }

    #[inline]
    fn budget_spent(&self) -> bool {
        self.cfg.max_samples.is_some_and(|cap| self.touched >= cap)
    }

    /// Counts `k` gradient evaluations during epoch `m` and emits cadence records.
    #[inline]
    fn touch(&mut self, k: u64, m: usize) -> Result<()> {
        self.touched += k;
        if self.touched >= self.next_mark {
            if let RecordCadence::PerSamples(step) = self.cfg.cadence {
                self.next_mark = (self.touched / step + 1) * step;
                self.check_divergence(m)?;
                self.record(m)?;
            }
        }
        Ok(())
    }

    fn check_divergence(&self, epoch: usize) -> Result<()> {
        let theta_norm = self.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let omega_norm = self.omega.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(theta_norm <= DIVERGENCE_NORM && omega_norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence {
                epoch,
                theta_norm,
                omega_norm,
            });
        }
        Ok(())
    }

    fn finish_epoch(&mut self, m: usize) -> Result<()> {
        self.check_divergence(m)?;
        self.epochs_run = m + 1;
        if self.cfg.cadence == RecordCadence::PerEpoch {
            self.record(m + 1)?;
        }
        Ok(())
    }

    fn into_trace(mut self) -> Result<SolverTrace> {
        let epoch = self.epochs_run;
        self.check_divergence(epoch)?;
        // the final iterate is always the last record
        if self.touched > self.last_recorded_touch() {
            self.record(epoch)?;
        }
        Ok(SolverTrace {
            solver: self.kind,
            config: self.cfg.clone(),
            final_iterate: self.iterate(),
            records: self.records,
            anchor_samples: self.anchor_samples,
            epochs_run: self.epochs_run,
        })
    }

    fn last_recorded_touch(&self) -> u64 {
        self.records.last().map_or(0, |r| r.samples_touched)
    }
}
