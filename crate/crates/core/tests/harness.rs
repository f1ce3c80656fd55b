mod common;

use std::path::Path;

use vrpe::harness::{
    aggregate, aggregate_to_csv, read_trace, run_file_name, select_steps, Count, ExperimentConfig,
    GridSpec, Prepared, RawConfig, StepChoice, ValidationSource,
};
use vrpe::solvers::run;
use vrpe::{load_experiment, report, run_experiment, Error, SolverConfig, SolverKind};

const BASE: &str = "
# small instance
mdp.states = 20
mdp.actions = 3
mdp.features = 4
mdp.samples = 400
mdp.seed = 2
solvers = svrg, scsg
sigma_theta = 1e-2
sigma_omega = 1e-2   # shared by both solvers
epochs = 6
seeds = 0..2
";

fn config(dir: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut raw = RawConfig::parse(BASE, Path::new("base.cfg")).unwrap();
    raw.set("out", dir.display().to_string());
    for e in extra {
        raw.apply_override(e).unwrap();
    }
    ExperimentConfig::from_raw(raw).unwrap()
}

fn config_err(extra: &[&str]) -> Error {
    let mut raw = RawConfig::parse(BASE, Path::new("base.cfg")).unwrap();
    for e in extra {
        if let Err(e) = raw.apply_override(e) {
            return e;
        }
    }
    ExperimentConfig::from_raw(raw).unwrap_err()
}

#[test]
fn grammar_comments_overrides_and_fallbacks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &[
            "solver.scsg.batch_size=0.25n",
            "epochs=8",
            "solver.svrg.epochs = 3",
        ],
    );
    assert_eq!(cfg.seeds, vec![0, 1]);
    let svrg = &cfg.solvers[0];
    let scsg = &cfg.solvers[1];
    assert_eq!(svrg.epochs, 3);
    assert_eq!(scsg.epochs, 8);
    assert_eq!(scsg.batch_size, Count::TimesN(0.25));
    assert_eq!(scsg.batch_size.resolve(400), 100);
    assert_eq!(
        svrg.steps,
        StepChoice::Fixed {
            sigma_theta: 1e-2,
            sigma_omega: 1e-2
        }
    );
    // a later entry replaces an earlier one
    let raw = RawConfig::parse("seeds = 1\nseeds = 4,5\n", Path::new("x")).unwrap();
    assert_eq!(raw.get("seeds"), Some("4,5"));
    // the echo parses back to the same entries
    assert_eq!(
        RawConfig::parse(&cfg.raw.to_text(), Path::new("echo")).unwrap(),
        cfg.raw
    );
}

#[test]
fn config_errors_are_reported() {
    assert!(matches!(config_err(&["mdp.sates=3"]), Error::Config(_)));
    assert!(matches!(config_err(&["solvers="]), Error::Config(_)));
    assert!(matches!(
        config_err(&["no equals sign"]),
        Error::Config(_) | Error::Parse { .. }
    ));
    assert!(matches!(
        config_err(&["sigma_omega=theory"]),
        Error::Config(_)
    ));
    assert!(matches!(
        config_err(&["solver.svrg.kind=saga"]),
        Error::Config(_)
    ));
    assert!(matches!(config_err(&["solvers=a,a"]), Error::Config(_)));
    // tuned steps need a grid
    let err = config_err(&["sigma_theta=tuned", "sigma_omega=tuned"]);
    assert!(matches!(err, Error::Config(_)));
    let e = RawConfig::parse("a.b = 1\n=2\n", Path::new("bad.cfg")).unwrap_err();
    assert!(matches!(e, Error::Parse { line: 2, .. }));
}

#[test]
fn experiment_writes_traces_and_recomputable_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.runs.len(), 4);
    for f in [
        "config.echo",
        "manifest.txt",
        "report.txt",
        "report.csv",
        "summary.txt",
        "aggregate_svrg.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for label in ["svrg", "scsg"] {
        let traces: Vec<_> = [0, 1]
            .iter()
            .map(|&s| read_trace(dir.path().join("runs").join(run_file_name(label, s))).unwrap())
            .collect();
        for (t, o) in traces.iter().zip(outcome.traces(label)) {
            assert_eq!(t, &o.records);
        }
        let agg = aggregate(&traces);
        let mean0 = (traces[0][0].em_mspbe + traces[1][0].em_mspbe) / 2.0;
        assert_eq!(agg[0].mean_em_mspbe, mean0);
        let written =
            std::fs::read_to_string(dir.path().join(format!("aggregate_{label}.csv"))).unwrap();
        assert_eq!(written, aggregate_to_csv(&agg));
    }
    // the report reloads from disk unchanged
    let (n, groups) = load_experiment(dir.path()).unwrap();
    assert_eq!(n, 400);
    assert_eq!(report(n, &groups), outcome.report);
}

#[test]
fn replay_from_echo_is_bitwise_identical() {
    let first = tempfile::tempdir().unwrap();
    let cfg = config(
        first.path(),
        &["cadence=samples", "solver.scsg.batch_size=40"],
    );
    run_experiment(&cfg).unwrap();
    let second = tempfile::tempdir().unwrap();
    let replay = ExperimentConfig::load(
        first.path().join("config.echo"),
        &[format!("out={}", second.path().display())],
    )
    .unwrap();
    run_experiment(&replay).unwrap();
    for label in ["svrg", "scsg"] {
        for seed in [0, 1] {
            let name = run_file_name(label, seed);
            let a = std::fs::read(first.path().join("runs").join(&name)).unwrap();
            let b = std::fs::read(second.path().join("runs").join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
}

#[test]
fn per_pass_cadence_records_after_each_multiple_of_n() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &["cadence=samples", "solvers=svrg", "inner_len=0.5n"],
    );
    let outcome = run_experiment(&cfg).unwrap();
    let trace = &outcome.traces("svrg")[0].records;
    let marks = &trace[1..trace.len() - 1];
    for (k, r) in marks.iter().enumerate() {
        let mark = 400 * (k as u64 + 1);
        // an anchor pass can carry the count past a mark by at most n
        assert!(
            r.samples_touched >= mark && r.samples_touched < mark + 400,
            "{k}: {}",
            r.samples_touched
        );
    }
    assert_eq!(trace.last().unwrap().samples_touched, 6 * 600);
}

#[test]
fn pass_count_reflects_anchor_and_inner_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["solvers=svrg", "inner_len=1n", "epochs=5"]);
    let outcome = run_experiment(&cfg).unwrap();
    let row = outcome.report.row("svrg").unwrap();
    // M (n + K) / n with K = n
    assert_eq!(row.mean_passes, 10.0);
    assert!(row.mean_passes >= 5.0);
}

#[test]
fn diverging_solver_does_not_abort_others() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &[
            "solver.scsg.sigma_theta=100",
            "solver.scsg.sigma_omega=100",
            "epochs=30",
        ],
    );
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.traces("svrg").len(), 2);
    assert_eq!(outcome.failures.len(), 2);
    assert!(outcome
        .failures
        .iter()
        .all(|f| f.label == "scsg" && f.numerical));
    assert!(!dir
        .path()
        .join("runs")
        .join(run_file_name("scsg", 0))
        .exists());
    assert!(outcome.report.row("scsg").is_none());
}

fn grid(values: &[f64]) -> GridSpec {
    GridSpec {
        values: values.to_vec(),
        seeds: 2,
        passes: 20.0,
        validation: ValidationSource::Same,
    }
}

fn template(n: u64) -> SolverConfig {
    SolverConfig {
        inner_len: n,
        ..Default::default()
    }
}

#[test]
fn single_value_grid_selects_it() {
    let v = Prepared::new(common::mdp_dataset(20, 3, 4, 300, 1), false).unwrap();
    let c = select_steps(SolverKind::Svrg, &template(300), &v, &grid(&[3e-3]), 1).unwrap();
    assert_eq!((c.sigma_theta, c.sigma_omega), (3e-3, 3e-3));
    assert_eq!(c.points.len(), 1);
}

#[test]
fn diverging_pairs_are_skipped() {
    let v = Prepared::new(common::mdp_dataset(20, 3, 4, 300, 1), false).unwrap();
    let c = select_steps(SolverKind::Svrg, &template(300), &v, &grid(&[1e-2, 1e3]), 1).unwrap();
    assert_eq!((c.sigma_theta, c.sigma_omega), (1e-2, 1e-2));
    assert!(c.points.iter().any(|p| p.mean_final.is_none()));
    assert!(c.to_csv().contains("diverged"));
    let all_bad = select_steps(SolverKind::Svrg, &template(300), &v, &grid(&[1e3]), 1);
    assert!(matches!(all_bad, Err(Error::AllDiverged { .. })));
}

#[test]
fn grid_choice_is_the_replayed_argmin() {
    let v = Prepared::new(common::mdp_dataset(30, 3, 6, 500, 7), false).unwrap();
    let g = grid(&[1e-1, 1e-2, 1e-3]);
    let t = SolverConfig {
        batch_size: 50,
        ..template(500)
    };
    let c = select_steps(SolverKind::Scsg, &t, &v, &g, 2).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &a in &g.values {
        for &b in &g.values {
            let mut sum = 0.0;
            let mut ok = true;
            for seed in 0..2 {
                let cfg = SolverConfig {
                    sigma_theta: a,
                    sigma_omega: b,
                    epochs: usize::MAX,
                    seed,
                    max_samples: Some(20 * 500),
                    ..t.clone()
                };
                match run(SolverKind::Scsg, &v.data, &v.stats, &cfg, None) {
                    Ok(tr) => sum += tr.last().em_mspbe,
                    Err(_) => ok = false,
                }
            }
            if ok && sum / 2.0 < best.0 {
                best = (sum / 2.0, a, b);
            }
        }
    }
    assert_eq!((c.sigma_theta, c.sigma_omega), (best.1, best.2));
}

#[test]
fn tuned_experiment_writes_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &[
            "sigma_theta=tuned",
            "sigma_omega=tuned",
            "grid=1e-2,1e-3",
            "grid.seeds=1",
            "grid.passes=5",
            "solvers=svrg",
        ],
    );
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.grid.len(), 1);
    let text = std::fs::read_to_string(dir.path().join("grid_svrg.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    let manifest = RawConfig::load(dir.path().join("manifest.txt")).unwrap();
    let chosen: f64 = manifest
        .get("solver.svrg.sigma_theta")
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(chosen, outcome.grid[0].1.sigma_theta);
}
