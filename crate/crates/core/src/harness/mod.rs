//! Experiment orchestration: configuration, step-size grid search, parallel
//! runs, trace files and comparison reports.
//!
//! An experiment directory holds
//!
//! ```text
//! config.echo              effective configuration (replays the experiment)
//! manifest.txt             dataset size and the resolved settings per solver
//! runs/<label>_seed<s>.csv one trace per (solver, seed)
//! aggregate_<label>.csv    mean and standard error per record index
//! grid_<label>.csv         validation scores, for solvers with tuned steps
//! report.txt, report.csv   samples-to-target comparison
//! summary.txt              run list and failures
//! ```
//!
//! Traces record EM-MSPBE as the objective value.

pub mod config;
mod report;
mod trace;

pub use config::{
    CadenceSpec, Count, DataSource, ExperimentConfig, GridSpec, InitChoice, InnerLen, RawConfig,
    ScheduleSpec, SolverSpec, StepChoice, ValidationSource,
};
pub use report::{report, samples_to_reach, Report, ReportRow, TargetHit, TARGETS};
pub use trace::{
    aggregate, aggregate_to_csv, parse_trace, read_trace, trace_to_csv, write_trace, AggregateRow,
    AGGREGATE_HEADER, TRACE_HEADER,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::envs::{collect_dataset_with, generate_mdp};
use crate::error::{Error, Result};
use crate::model::read_dataset;
use crate::model::{build_stats, ModelStats, TransitionDataset};
use crate::objective::SaddleIterate;
use crate::solvers::{
    estimate_xi_sq, run, solve_direct, BatchSchedule, RecordCadence, SolverConfig, SolverKind,
    SolverTrace, TraceRecord,
};
use crate::spectral::{analyze, SpectralInfo};

/// Traces of one solver label, one per seed.
pub type RunGroup = (String, Vec<Vec<TraceRecord>>);

/// A dataset with its statistics and, when some solver needs it, its spectral analysis.
pub struct Prepared {
    pub data: TransitionDataset,
    pub stats: ModelStats,
    pub spectral: Option<SpectralInfo>,
}

impl Prepared {
    pub fn new(data: TransitionDataset, with_spectral: bool) -> Result<Self> {
        let stats = build_stats(&data);
        let spectral = if with_spectral {
            Some(analyze(&data, &stats)?)
        } else {
            None
        };
        Ok(Prepared {
            data,
            stats,
            spectral,
        })
    }

    pub fn for_experiment(cfg: &ExperimentConfig) -> Result<Self> {
        Self::new(load_source(&cfg.source)?, needs_spectral(cfg))
    }

    fn spectral(&self, label: &str) -> Result<&SpectralInfo> {
        self.spectral.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "solver `{label}` needs the spectral analysis, which was not computed"
            ))
        })
    }
}

fn needs_spectral(cfg: &ExperimentConfig) -> bool {
    cfg.solvers.iter().any(|s| {
        s.steps == StepChoice::Theory || s.inner_len == InnerLen::Theory || s.record_potential
    })
}

pub fn load_source(source: &DataSource) -> Result<TransitionDataset> {
    match source {
        DataSource::File(path) => read_dataset(path),
        DataSource::Mdp {
            spec,
            samples,
            collect_seed,
            collection,
        } => {
            let (mdp, policy) = generate_mdp(spec)?;
            collect_dataset_with(&mdp, &policy, *samples, *collect_seed, *collection)
        }
    }
}

/// The dataset grid search scores step sizes on.
pub fn load_validation(cfg: &ExperimentConfig) -> Result<TransitionDataset> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("no `grid` configured".into()))?;
    match (&grid.validation, &cfg.source) {
        (ValidationSource::File(path), _) => read_dataset(path),
        (ValidationSource::Same, source) => load_source(source),
        (
            ValidationSource::Recollect { seed },
            DataSource::Mdp {
                spec,
                samples,
                collection,
                ..
            },
        ) => {
            let (mdp, policy) = generate_mdp(spec)?;
            collect_dataset_with(&mdp, &policy, *samples, *seed, *collection)
        }
        (ValidationSource::Recollect { .. }, DataSource::File(_)) => Err(Error::Config(
            "re-collecting a validation set needs an `mdp.*` dataset".into(),
        )),
    }
}

/// Turns a solver entry into a concrete configuration for `seed`.
///
/// `tuned` supplies the step sizes for [`StepChoice::Tuned`] entries.
pub fn resolve_solver(
    cfg: &ExperimentConfig,
    spec: &SolverSpec,
    prepared: &Prepared,
    tuned: Option<(f64, f64)>,
    seed: u64,
) -> Result<SolverConfig> {
    let n = prepared.data.len();
    let (sigma_theta, sigma_omega) = match spec.steps {
        StepChoice::Fixed {
            sigma_theta,
            sigma_omega,
        } => (sigma_theta, sigma_omega),
        StepChoice::Theory => {
            let info = prepared.spectral(&spec.label)?;
            (info.sigma_theta, info.sigma_omega)
        }
        StepChoice::Tuned => tuned.ok_or_else(|| {
            Error::Config(format!(
                "solver `{}` has no step sizes; set sigma_theta/sigma_omega or `grid`",
                spec.label
            ))
        })?,
    };
    let inner_len = match spec.inner_len {
        InnerLen::Count(c) => c.resolve(n),
        InnerLen::Theory => prepared.spectral(&spec.label)?.k_epochlen,
    };
    let as_usize = |c: Count| usize::try_from(c.resolve(n)).unwrap_or(usize::MAX);
    let schedule = match spec.schedule {
        ScheduleSpec::Fixed(b) => BatchSchedule::Fixed(as_usize(b)),
        ScheduleSpec::Multiplicative { initial, growth } => BatchSchedule::Multiplicative {
            initial: as_usize(initial),
            growth,
        },
        ScheduleSpec::VarianceDriven { xi_sq, alpha, rho } => BatchSchedule::VarianceDriven {
            xi_sq: match xi_sq {
                Some(x) => x,
                None => estimate_xi_sq(&prepared.data, &SaddleIterate::zeros(prepared.data.dim())),
            },
            alpha,
            rho,
        },
    };
    let cadence = match cfg.cadence {
        CadenceSpec::PerEpoch => RecordCadence::PerEpoch,
        CadenceSpec::PerPass => RecordCadence::PerSamples(n as u64),
        CadenceSpec::Every(c) => RecordCadence::PerSamples(c.resolve(n)),
    };
    let init = match cfg.init {
        InitChoice::Zero => None,
        InitChoice::Optimum => Some(solve_direct(&prepared.stats)?),
    };
    let solver = SolverConfig {
        sigma_theta,
        sigma_omega,
        epochs: spec.epochs,
        inner_len,
        batch_size: as_usize(spec.batch_size),
        schedule,
        seed,
        record_potential: spec.record_potential,
        cadence,
        max_samples: spec.max_samples.map(|c| c.resolve(n)),
        init,
    };
    solver.validate(spec.kind, n)?;
    Ok(solver)
}

/// Validation score of one step-size pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub sigma_theta: f64,
    pub sigma_omega: f64,
    /// Mean final `em_mspbe` over the validation seeds; `None` when any seed diverged.
    pub mean_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridChoice {
    pub sigma_theta: f64,
    pub sigma_omega: f64,
    pub points: Vec<GridPoint>,
}

impl GridChoice {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma_theta,sigma_omega,mean_final_em_mspbe\n");
        for p in &self.points {
            let score = p
                .mean_final
                .map(|s| format!("{s:e}"))
                .unwrap_or_else(|| "diverged".into());
            let _ = writeln!(out, "{:e},{:e},{score}", p.sigma_theta, p.sigma_omega);
        }
        out
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Scores every `(sigma_theta, sigma_omega)` in `grid x grid` on the validation
/// data for a budget of `passes * n` samples touched over `seeds` runs
/// (seeds `0..seeds`), and picks the lowest mean final `em_mspbe`.
/// Ties go to the smaller `sigma_theta`, then the smaller `sigma_omega`.
pub fn select_steps(
    kind: SolverKind,
    template: &SolverConfig,
    validation: &Prepared,
    grid: &GridSpec,
    workers: usize,
) -> Result<GridChoice> {
    let n = validation.data.len();
    if kind == SolverKind::Gtd2 && template.inner_len == 0 {
        return Err(Error::Config(
            "GTD2 grid search needs a positive inner_len".into(),
        ));
    }
    let mut values = grid.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .flat_map(|&a| values.iter().map(move |&b| (a, b)))
        .collect();
    let budget = crate::solvers::ceil_tolerant(grid.passes * n as f64) as u64;
    let jobs: Vec<(usize, u64)> = (0..pairs.len())
        .flat_map(|p| (0..grid.seeds as u64).map(move |s| (p, s)))
        .collect();

    let finals: Vec<Result<Option<f64>>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(p, seed)| {
                let cfg = SolverConfig {
                    sigma_theta: pairs[p].0,
                    sigma_omega: pairs[p].1,
                    epochs: usize::MAX,
                    seed,
                    record_potential: false,
                    cadence: RecordCadence::PerEpoch,
                    max_samples: Some(budget),
                    ..template.clone()
                };
                match run(kind, &validation.data, &validation.stats, &cfg, None) {
                    Ok(trace) => Ok(Some(trace.last().em_mspbe).filter(|v| v.is_finite())),
                    Err(Error::Divergence { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });

    let mut points = Vec::with_capacity(pairs.len());
    let mut finals = finals.into_iter();
    for &(sigma_theta, sigma_omega) in &pairs {
        let mut sum = Some(0.0);
        for _ in 0..grid.seeds {
            let v = finals.next().expect("one result per job")?;
            sum = sum.zip(v).map(|(a, b)| a + b);
        }
        points.push(GridPoint {
            sigma_theta,
            sigma_omega,
            mean_final: sum.map(|s| s / grid.seeds as f64),
        });
    }
    let best = points
        .iter()
        .filter_map(|p| p.mean_final.map(|m| (m, p)))
        .fold(None::<(f64, &GridPoint)>, |acc, (m, p)| match acc {
            Some((bm, _)) if bm <= m => acc,
            _ => Some((m, p)),
        })
        .map(|(_, p)| (p.sigma_theta, p.sigma_omega));
    match best {
        Some((sigma_theta, sigma_omega)) => Ok(GridChoice {
            sigma_theta,
            sigma_omega,
            points,
        }),
        None => Err(Error::AllDiverged {
            solver: kind.to_string(),
        }),
    }
}

/// Grid search for every solver with tuned steps, on the configured validation data.
pub fn grid_select(
    cfg: &ExperimentConfig,
    validation: &Prepared,
) -> Result<Vec<(String, Result<GridChoice>)>> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("no `grid` configured".into()))?;
    Ok(cfg
        .solvers
        .iter()
        .filter(|s| s.steps == StepChoice::Tuned)
        .map(|spec| {
            let choice =
                resolve_solver(cfg, spec, validation, Some((0.0, 0.0)), 0).and_then(|template| {
                    select_steps(spec.kind, &template, validation, grid, cfg.workers)
                });
            if let Ok(c) = &choice {
                info!(
                    "{}: selected sigma_theta={:e} sigma_omega={:e}",
                    spec.label, c.sigma_theta, c.sigma_omega
                );
            }
            (spec.label.clone(), choice)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub trace: SolverTrace,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub label: String,
    /// `None` when the solver failed before any seed ran (resolution or grid search).
    pub seed: Option<u64>,
    pub message: String,
    pub numerical: bool,
}

impl RunFailure {
    fn new(label: &str, seed: Option<u64>, err: &Error) -> Self {
        RunFailure {
            label: label.to_string(),
            seed,
            message: err.to_string(),
            numerical: err.is_numerical(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out: PathBuf,
    pub n: usize,
    pub d: usize,
    pub runs: Vec<RunOutcome>,
    pub failures: Vec<RunFailure>,
    pub grid: Vec<(String, GridChoice)>,
    pub report: Report,
}

impl ExperimentOutcome {
    pub fn traces(&self, label: &str) -> Vec<&SolverTrace> {
        self.runs
            .iter()
            .filter(|r| r.label == label)
            .map(|r| &r.trace)
            .collect()
    }
}

pub fn run_file_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every (solver, seed) pair and writes the experiment directory.
///
/// Dataset and spectral errors abort the experiment; errors of individual
/// runs or of one solver's grid search are collected in `failures`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let prepared = Prepared::for_experiment(cfg)?;
    let (n, d) = (prepared.data.len(), prepared.data.dim());
    let runs_dir = cfg.out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write_file(&cfg.out.join("config.echo"), &cfg.raw.to_text())?;

    let mut failures = Vec::new();
    let mut grid = Vec::new();
    if cfg.solvers.iter().any(|s| s.steps == StepChoice::Tuned) {
        let validation = Prepared::new(load_validation(cfg)?, needs_spectral(cfg))?;
        for (label, choice) in grid_select(cfg, &validation)? {
            match choice {
                Ok(c) => {
                    write_file(&cfg.out.join(format!("grid_{label}.csv")), &c.to_csv())?;
                    grid.push((label, c));
                }
                Err(e) => {
                    warn!("{label}: grid search failed: {e}");
                    failures.push(RunFailure::new(&label, None, &e));
                }
            }
        }
    }

    let mut templates = Vec::new();
    for spec in &cfg.solvers {
        let tuned = grid
            .iter()
            .find(|(l, _)| *l == spec.label)
            .map(|(_, c)| (c.sigma_theta, c.sigma_omega));
        if spec.steps == StepChoice::Tuned && tuned.is_none() {
            continue;
        }
        match resolve_solver(cfg, spec, &prepared, tuned, 0) {
            Ok(t) => templates.push((spec, t)),
            Err(e) => failures.push(RunFailure::new(&spec.label, None, &e)),
        }
    }

    let jobs: Vec<(usize, u64)> = (0..templates.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Result<RunOutcome>> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let (spec, template) = &templates[i];
                let solver_cfg = SolverConfig {
                    seed,
                    ..template.clone()
                };
                let path = runs_dir.join(run_file_name(&spec.label, seed));
                let _ = std::fs::remove_file(&path);
                let trace = run(
                    spec.kind,
                    &prepared.data,
                    &prepared.stats,
                    &solver_cfg,
                    prepared.spectral.as_ref(),
                )?;
                write_trace(&path, &trace.records)?;
                info!(
                    "{} seed {seed}: final em_mspbe {:e}",
                    spec.label,
                    trace.last().em_mspbe
                );
                Ok(RunOutcome {
                    label: spec.label.clone(),
                    seed,
                    trace,
                    path,
                })
            })
            .collect()
    });

    let mut runs = Vec::new();
    for (&(i, seed), result) in jobs.iter().zip(results) {
        match result {
            Ok(r) => runs.push(r),
            Err(e) => {
                warn!("{} seed {seed}: {e}", templates[i].0.label);
                failures.push(RunFailure::new(&templates[i].0.label, Some(seed), &e));
            }
        }
    }

    // aggregates are recomputed from the files just written
    let mut groups = Vec::new();
    for (spec, _) in &templates {
        let traces = runs
            .iter()
            .filter(|r| r.label == spec.label)
            .map(|r| read_trace(&r.path))
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate(&traces);
        write_file(
            &cfg.out.join(format!("aggregate_{}.csv", spec.label)),
            &aggregate_to_csv(&agg),
        )?;
        groups.push((spec.label.clone(), traces));
    }
    let rep = report(n, &groups);
    write_file(&cfg.out.join("report.txt"), &rep.to_text())?;
    write_file(&cfg.out.join("report.csv"), &rep.to_csv())?;
    write_file(
        &cfg.out.join("manifest.txt"),
        &manifest(&prepared, &templates, &runs),
    )?;
    write_file(&cfg.out.join("summary.txt"), &summary(&runs, &failures))?;

    Ok(ExperimentOutcome {
        out: cfg.out.clone(),
        n,
        d,
        runs,
        failures,
        grid,
        report: rep,
    })
}

fn manifest(
    prepared: &Prepared,
    templates: &[(&SolverSpec, SolverConfig)],
    runs: &[RunOutcome],
) -> String {
    let mut m = RawConfig::default();
    m.set("n", prepared.data.len().to_string());
    m.set("d", prepared.data.dim().to_string());
    m.set("gamma", prepared.data.gamma().to_string());
    let labels: Vec<&str> = templates.iter().map(|(s, _)| s.label.as_str()).collect();
    m.set("solvers", labels.join(","));
    for (spec, t) in templates {
        let key = |f: &str| format!("solver.{}.{f}", spec.label);
        m.set(&key("kind"), spec.kind.name());
        m.set(&key("sigma_theta"), format!("{:e}", t.sigma_theta));
        m.set(&key("sigma_omega"), format!("{:e}", t.sigma_omega));
        m.set(&key("epochs"), t.epochs.to_string());
        m.set(&key("inner_len"), t.inner_len.to_string());
        let seeds: Vec<String> = runs
            .iter()
            .filter(|r| r.label == spec.label)
            .map(|r| r.seed.to_string())
            .collect();
        m.set(&key("runs"), seeds.join(","));
    }
    m.to_text()
}

fn summary(runs: &[RunOutcome], failures: &[RunFailure]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} runs completed, {} failed",
        runs.len(),
        failures.len()
    );
    for r in runs {
        let last = r.trace.last();
        let _ = writeln!(
            out,
            "ok     {} seed {}: {} epochs, {} samples, final em_mspbe {:e}",
            r.label, r.seed, r.trace.epochs_run, last.samples_touched, last.em_mspbe
        );
    }
    for f in failures {
        let seed = f
            .seed
            .map(|s| format!("seed {s}"))
            .unwrap_or_else(|| "all seeds".into());
        let _ = writeln!(out, "failed {} {seed}: {}", f.label, f.message);
    }
    out
}

/// Reads the traces of an experiment directory, grouped by solver label.
pub fn load_experiment(dir: impl AsRef<Path>) -> Result<(usize, Vec<RunGroup>)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.txt");
    let manifest = RawConfig::load(&manifest_path)?;
    let bad = |msg: &str| Error::Config(format!("{}: {msg}", manifest_path.display()));
    let n: usize = manifest
        .get("n")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing dataset size `n`"))?;
    let labels = manifest.get("solvers").unwrap_or("");
    let mut groups = Vec::new();
    for label in labels.split(',').map(str::trim).filter(|l| !l.is_empty()) {
        let seeds =
            config::parse_seeds(manifest.get(&format!("solver.{label}.runs")).unwrap_or(""))?;
        let traces = seeds
            .iter()
            .map(|&s| read_trace(dir.join("runs").join(run_file_name(label, s))))
            .collect::<Result<Vec<_>>>()?;
        groups.push((label.to_string(), traces));
    }
    Ok((n, groups))
}
