//! `vrpe`: generate datasets, inspect spectra, run solvers and experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use vrpe::harness::{self, DataSource, ExperimentConfig, Prepared, RawConfig};
use vrpe::model::write_dataset;
use vrpe::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vrpe",
    version,
    about = "Variance-reduced policy evaluation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random-MDP dataset from the `mdp.*` keys; `--seed` sets the collection seed.
    Generate(Common),
    /// Print beta, the spectrum summary of G and the theoretical step sizes.
    CheckSpectral(Common),
    /// Run one solver for one seed and write its trace.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Solver label from `solvers`; defaults to the first one.
        #[arg(long)]
        solver: Option<String>,
    },
    /// Run the full experiment (grid search, all solvers and seeds) and print the report.
    Bench(Common),
    /// Print the comparison report of an experiment directory.
    Report {
        /// Experiment directory; defaults to `--out`.
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Config file plus overrides, with `--out` folded in.
    fn raw(&self) -> Result<RawConfig> {
        let mut raw = RawConfig::load(&self.config)?;
        for o in &self.overrides {
            raw.apply_override(o)?;
        }
        if let Some(out) = &self.out {
            raw.set("out", out.display().to_string());
        }
        Ok(raw)
    }

    /// Experiment config where `--seed` replaces the seed list.
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut raw = self.raw()?;
        if let Some(seed) = self.seed {
            raw.set("seeds", seed.to_string());
        }
        ExperimentConfig::from_raw(raw)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => generate(c).map(|()| 0),
        Command::CheckSpectral(c) => check_spectral(c).map(|()| 0),
        Command::Solve { common, solver } => solve(common, solver.as_deref()).map(|()| 0),
        Command::Bench(c) => bench(c),
        Command::Report { dir, out } => match dir.as_ref().or(out.as_ref()) {
            Some(d) => report(d).map(|()| 0),
            None => Err(Error::Config("report needs an experiment directory".into())),
        },
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            })
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn generate(c: &Common) -> Result<()> {
    let mut raw = c.raw()?;
    if let Some(seed) = c.seed {
        raw.set("mdp.collect_seed", seed.to_string());
    }
    let source = DataSource::from_raw(&raw)?;
    let DataSource::Mdp {
        spec,
        samples,
        collect_seed,
        ..
    } = &source
    else {
        return Err(Error::Config("generate needs the `mdp.*` keys".into()));
    };
    let data = harness::load_source(&source)?;
    let out = PathBuf::from(raw.get("out").unwrap_or("results"));
    create_dir(&out)?;
    let path = out.join("dataset.txt");
    let comments = vec![
        spec.describe(),
        format!("samples={samples} collect_seed={collect_seed}"),
    ];
    write_dataset(&path, &data, &comments)?;
    println!(
        "wrote {} transitions (d = {}) to {}",
        data.len(),
        data.dim(),
        path.display()
    );
    Ok(())
}

fn check_spectral(c: &Common) -> Result<()> {
    let raw = c.raw()?;
    let prepared = Prepared::new(harness::load_source(&DataSource::from_raw(&raw)?)?, true)?;
    let info = prepared.spectral.as_ref().expect("requested");
    let mut text = String::new();
    let mut line = |k: &str, v: String| {
        text.push_str(&format!("{k} = {v}\n"));
    };
    line("n", prepared.data.len().to_string());
    line("d", prepared.data.dim().to_string());
    line("beta", format!("{:e}", info.beta));
    line("lambda_min", format!("{:e}", info.lambda_min));
    line("lambda_max", format!("{:e}", info.lambda_max));
    line("max_imag", format!("{:e}", info.max_imag));
    line("kappa_q", format!("{:e}", info.kappa_q));
    line("l_g", format!("{:e}", info.l_g));
    line("h", format!("{:e}", info.complexity));
    line("sigma_theta", format!("{:e}", info.sigma_theta));
    line("sigma_omega", format!("{:e}", info.sigma_omega));
    line("k", info.k_epochlen.to_string());
    line("scsg_min_batch", format!("{:e}", info.min_scsg_batch()));
    print!("{text}");
    if let Some(out) = &c.out {
        create_dir(out)?;
        write_text(&out.join("spectral.txt"), &text)?;
    }
    Ok(())
}

fn solve(c: &Common, label: Option<&str>) -> Result<()> {
    let cfg = c.experiment()?;
    let spec = match label {
        Some(l) => cfg
            .solvers
            .iter()
            .find(|s| s.label == l)
            .ok_or_else(|| Error::Config(format!("no solver labelled `{l}`")))?,
        None => &cfg.solvers[0],
    };
    let seed = cfg.seeds[0];
    let prepared = Prepared::for_experiment(&cfg)?;
    let tuned = match spec.steps {
        harness::StepChoice::Tuned => {
            let validation =
                Prepared::new(harness::load_validation(&cfg)?, prepared.spectral.is_some())?;
            let grid = cfg.grid.as_ref().expect("validated");
            let template = harness::resolve_solver(&cfg, spec, &validation, Some((0.0, 0.0)), 0)?;
            let choice =
                harness::select_steps(spec.kind, &template, &validation, grid, cfg.workers)?;
            Some((choice.sigma_theta, choice.sigma_omega))
        }
        _ => None,
    };
    let solver_cfg = harness::resolve_solver(&cfg, spec, &prepared, tuned, seed)?;
    let trace = vrpe::solvers::run(
        spec.kind,
        &prepared.data,
        &prepared.stats,
        &solver_cfg,
        prepared.spectral.as_ref(),
    )?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(harness::run_file_name(&spec.label, seed));
    harness::write_trace(&path, &trace.records)?;
    let last = trace.last();
    println!(
        "{} seed {seed}: sigma_theta={:e} sigma_omega={:e} epochs={} samples={} em_mspbe={:e} dist_theta_sq={:e}",
        spec.label,
        solver_cfg.sigma_theta,
        solver_cfg.sigma_omega,
        trace.epochs_run,
        last.samples_touched,
        last.em_mspbe,
        last.dist_theta_sq
    );
    println!("trace written to {}", path.display());
    Ok(())
}

/// Returns the exit code; partial failures still count as success.
fn bench(c: &Common) -> Result<u8> {
    let cfg = c.experiment()?;
    let outcome = harness::run_experiment(&cfg)?;
    print!("{}", outcome.report.to_text());
    for f in &outcome.failures {
        let seed = f
            .seed
            .map(|s| format!("seed {s}"))
            .unwrap_or_else(|| "all seeds".into());
        eprintln!("failed: {} {seed}: {}", f.label, f.message);
    }
    println!("results in {}", outcome.out.display());
    match outcome.failures.first() {
        Some(f) if outcome.runs.is_empty() => {
            eprintln!("error: no run completed");
            Ok(if f.numerical {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            })
        }
        _ => Ok(0),
    }
}

fn report(dir: &Path) -> Result<()> {
    let (n, groups) = harness::load_experiment(dir)?;
    let rep = harness::report(n, &groups);
    print!("{}", rep.to_text());
    write_text(&dir.join("report.csv"), &rep.to_csv())?;
    Ok(())
}
