//! Cost-to-accuracy comparison across solvers.

use std::fmt::Write as _;

use crate::solvers::TraceRecord;

/// Accuracy targets relative to the initial `em_mspbe` of each run.
pub const TARGETS: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// First `samples_touched` at which `em_mspbe <= factor * initial`.
pub fn samples_to_reach(records: &[TraceRecord], factor: f64) -> Option<u64> {
    let initial = records.first()?.em_mspbe;
    records
        .iter()
        .find(|r| r.em_mspbe <= factor * initial)
        .map(|r| r.samples_touched)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetHit {
    pub factor: f64,
    /// Runs that reached the target.
    pub reached: usize,
    /// Mean over the runs that reached it.
    pub mean_samples: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub runs: usize,
    pub targets: Vec<TargetHit>,
    pub mean_final_em_mspbe: f64,
    /// Mean of `samples_touched / n` at the end of the run.
    pub mean_passes: f64,
}

impl ReportRow {
    pub fn target(&self, factor: f64) -> Option<&TargetHit> {
        self.targets.iter().find(|t| t.factor == factor)
    }

    /// Mean samples to reach `factor`, only when every run reached it.
    pub fn samples_if_all_reached(&self, factor: f64) -> Option<f64> {
        self.target(factor)
            .filter(|t| t.reached == self.runs)
            .and_then(|t| t.mean_samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub n: usize,
    pub rows: Vec<ReportRow>,
}

/// Builds one row per labelled group of runs. Groups without runs are skipped.
pub fn report(n: usize, groups: &[(String, Vec<Vec<TraceRecord>>)]) -> Report {
    let rows = groups
        .iter()
        .filter(|(_, runs)| runs.iter().any(|r| !r.is_empty()))
        .map(|(label, runs)| {
            let runs: Vec<&Vec<TraceRecord>> = runs.iter().filter(|r| !r.is_empty()).collect();
            let count = runs.len() as f64;
            let targets = TARGETS
                .iter()
                .map(|&factor| {
                    let hits: Vec<u64> = runs
                        .iter()
                        .filter_map(|r| samples_to_reach(r, factor))
                        .collect();
                    TargetHit {
                        factor,
                        reached: hits.len(),
                        mean_samples: (!hits.is_empty()).then(|| {
                            hits.iter().map(|&h| h as f64).sum::<f64>() / hits.len() as f64
                        }),
                    }
                })
                .collect();
            let last = |r: &&Vec<TraceRecord>| r.last().cloned().expect("non-empty");
            ReportRow {
                label: label.clone(),
                runs: runs.len(),
                targets,
                mean_final_em_mspbe: runs.iter().map(|r| last(r).em_mspbe).sum::<f64>() / count,
                mean_passes: runs
                    .iter()
                    .map(|r| last(r).samples_touched as f64)
                    .sum::<f64>()
                    / count
                    / n as f64,
            }
        })
        .collect();
    Report { n, rows }
}

impl Report {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16} {:>5}", "solver", "runs");
        for t in TARGETS {
            let _ = write!(out, " {:>20}", format!("samples to {t:.0e}"));
        }
        let _ = writeln!(out, " {:>14} {:>10}", "final em_mspbe", "passes");
        for row in &self.rows {
            let _ = write!(out, "{:<16} {:>5}", row.label, row.runs);
            for t in &row.targets {
                let cell = match t.mean_samples {
                    None => "not reached".to_string(),
                    Some(s) if t.reached == row.runs => format!("{s:.0}"),
                    Some(s) => format!("{s:.0} ({}/{})", t.reached, row.runs),
                };
                let _ = write!(out, " {cell:>20}");
            }
            let _ = writeln!(
                out,
                " {:>14.4e} {:>10.2}",
                row.mean_final_em_mspbe, row.mean_passes
            );
        }
        let _ = writeln!(
            out,
            "targets are fractions of each run's initial em_mspbe; n = {}",
            self.n
        );
        out
    }

    /// One line per (solver, target); `samples` is empty when no run reached the target.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "solver,target,runs,reached,mean_samples,mean_final_em_mspbe,mean_passes\n",
        );
        for row in &self.rows {
            for t in &row.targets {
                let samples = t.mean_samples.map(|s| format!("{s:e}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{:e},{},{},{},{:e},{:e}",
                    row.label,
                    t.factor,
                    row.runs,
                    t.reached,
                    samples,
                    row.mean_final_em_mspbe,
                    row.mean_passes
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(points: &[(u64, f64)]) -> Vec<TraceRecord> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(s, em))| TraceRecord {
                epoch: i,
                samples_touched: s,
                em_mspbe: em,
                dist_theta_sq: 0.0,
                potential: None,
            })
            .collect()
    }

    #[test]
    fn first_crossing_is_reported() {
        let t = trace(&[(0, 1.0), (10, 0.1), (20, 0.01), (30, 1e-3)]);
        assert_eq!(samples_to_reach(&t, 1e-2), Some(20));
        assert_eq!(samples_to_reach(&t, 1e-4), None);
    }

    #[test]
    fn never_reached_prints_not_reached() {
        let r = report(10, &[("svrg".into(), vec![trace(&[(0, 1.0), (20, 0.5)])])]);
        assert!(r.to_text().contains("not reached"));
        assert_eq!(r.rows[0].mean_passes, 2.0);
        assert!(r
            .to_csv()
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("svrg,1e-2,1,0,,"));
    }

    #[test]
    fn partial_hits_are_flagged() {
        let r = report(
            10,
            &[(
                "scsg".into(),
                vec![trace(&[(0, 1.0), (5, 1e-3)]), trace(&[(0, 1.0), (7, 0.5)])],
            )],
        );
        let row = r.row("scsg").unwrap();
        assert_eq!(row.target(1e-2).unwrap().reached, 1);
        assert_eq!(row.samples_if_all_reached(1e-2), None);
        assert!(r.to_text().contains("5 (1/2)"));
    }
}
