//! Line-oriented dataset files.
//!
//! ```text
//! # d=<d> gamma=<gamma> n=<n>
//! # any further comment lines are ignored
//! r,phi_0,...,phi_{d-1},phinext_0,...,phinext_{d-1}
//! ```
//!
//! Numbers are written with 17 significant digits so a write/read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatasetBuilder, TransitionDataset};
use crate::error::{Error, Result};

/// Metadata carried by the first line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub d: usize,
    pub gamma: f64,
    pub n: usize,
}

impl DatasetHeader {
    fn parse(line: &str) -> Option<Self> {
        let body = line.strip_prefix('#')?;
        let (mut d, mut gamma, mut n) = (None, None, None);
        for field in body.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "d" => d = value.parse().ok(),
                "gamma" => gamma = value.parse().ok(),
                "n" => n = value.parse().ok(),
                _ => {}
            }
        }
        Some(DatasetHeader {
            d: d?,
            gamma: gamma?,
            n: n?,
        })
    }
}

/// Writes `data` to `path`. Each entry of `comments` becomes an extra `# ` line after the header.
pub fn write_dataset(
    path: impl AsRef<Path>,
    data: &TransitionDataset,
    comments: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        out,
        "# d={} gamma={:.16e} n={}",
        data.dim(),
        data.gamma(),
        data.len()
    )
    .map_err(io)?;
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    let mut line = String::new();
    for t in 0..data.len() {
        line.clear();
        push_num(&mut line, data.reward(t));
        for v in data.phi(t).iter().chain(data.phi_next(t)) {
            line.push(',');
            push_num(&mut line, *v);
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn push_num(buf: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(buf, "{v:.16e}");
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<TransitionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(l))) => DatasetHeader::parse(l.trim())
            .ok_or_else(|| parse_err(1, "expected header `# d=<d> gamma=<gamma> n=<n>`".into()))?,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(parse_err(1, "empty file".into())),
    };

    let d = header.d;
    let mut builder =
        DatasetBuilder::new(d, header.gamma, header.n).map_err(|e| parse_err(1, e.to_string()))?;
    let mut values = Vec::with_capacity(2 * d + 1);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        values.clear();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad number `{field}`")))?;
            values.push(v);
        }
        if values.len() != 2 * d + 1 {
            return Err(parse_err(
                idx + 1,
                format!("expected {} fields, found {}", 2 * d + 1, values.len()),
            ));
        }
        builder
            .push(&values[1..=d], &values[d + 1..], values[0])
            .map_err(|e| parse_err(idx + 1, e.to_string()))?;
    }
    let data = builder.finish().map_err(|e| parse_err(1, e.to_string()))?;
    if data.len() != header.n {
        return Err(parse_err(
            1,
            format!(
                "header announces n={} but file holds {}",
                header.n,
                data.len()
            ),
        ));
    }
    Ok(data)
}
