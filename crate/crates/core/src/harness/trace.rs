//! Trace CSV files and their per-record aggregates.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back yields the exact values that were written.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::solvers::TraceRecord;

pub const TRACE_HEADER: &str = "epoch,samples_touched,em_mspbe,dist_theta_sq,potential";
pub const AGGREGATE_HEADER: &str = "record,runs,mean_samples_touched,mean_em_mspbe,stderr_em_mspbe";

pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{:e},{:e},",
            r.epoch, r.samples_touched, r.em_mspbe, r.dist_theta_sq
        );
        if let Some(p) = r.potential {
            let _ = write!(out, "{p:e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace_to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_trace(text: &str, origin: &Path) -> Result<Vec<TraceRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(err(1, format!("expected header `{TRACE_HEADER}`"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(err(
                i + 1,
                format!("expected 5 columns, found {}", cols.len()),
            ));
        }
        let bad = |c: &str| err(i + 1, format!("cannot parse `{c}`"));
        records.push(TraceRecord {
            epoch: cols[0].parse().map_err(|_| bad(cols[0]))?,
            samples_touched: cols[1].parse().map_err(|_| bad(cols[1]))?,
            em_mspbe: cols[2].parse().map_err(|_| bad(cols[2]))?,
            dist_theta_sq: cols[3].parse().map_err(|_| bad(cols[3]))?,
            potential: match cols[4].trim() {
                "" => None,
                p => Some(p.parse().map_err(|_| bad(p))?),
            },
        });
    }
    Ok(records)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

/// Cross-run statistics at one record index.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub record: usize,
    /// Runs long enough to have this record.
    pub runs: usize,
    pub mean_samples_touched: f64,
    pub mean_em_mspbe: f64,
    /// Standard error of the mean; zero for a single run.
    pub stderr_em_mspbe: f64,
}

/// Mean and standard error of `em_mspbe` per record index across runs.
pub fn aggregate(runs: &[Vec<TraceRecord>]) -> Vec<AggregateRow> {
    let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|k| {
            let rows: Vec<&TraceRecord> = runs.iter().filter_map(|r| r.get(k)).collect();
            let m = rows.len() as f64;
            let mean = rows.iter().map(|r| r.em_mspbe).sum::<f64>() / m;
            let stderr = if rows.len() > 1 {
                let var = rows
                    .iter()
                    .map(|r| (r.em_mspbe - mean).powi(2))
                    .sum::<f64>()
                    / (m - 1.0);
                (var / m).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                record: k,
                runs: rows.len(),
                mean_samples_touched: rows.iter().map(|r| r.samples_touched as f64).sum::<f64>()
                    / m,
                mean_em_mspbe: mean,
                stderr_em_mspbe: stderr,
            }
        })
        .collect()
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            r.record, r.runs, r.mean_samples_touched, r.mean_em_mspbe, r.stderr_em_mspbe
        );
    }
    out
}
