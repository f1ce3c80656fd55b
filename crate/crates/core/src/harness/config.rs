//! Flat `key = value` experiment configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key '=' value [ '#' any* ]
//! key     := segment ('.' segment)*        segment := [A-Za-z0-9_-]+
//! ```
//!
//! Whitespace around keys and values is ignored and a later entry for the same
//! key replaces an earlier one. `--override key=value` uses the same entry syntax.
//!
//! Counts accept either an integer or a multiple of the dataset size written
//! with an `n` suffix (`2000`, `0.1n`, `1n`). Per-solver keys
//! `solver.<label>.<field>` fall back to a top-level `<field>` before the
//! built-in default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::envs::{Collection, RandomMdpSpec};
use crate::error::{Error, Result};
use crate::solvers::SolverKind;

/// Keys accepted either at top level or under `solver.<label>.`.
const SOLVER_FIELDS: &[&str] = &[
    "kind",
    "sigma_theta",
    "sigma_omega",
    "epochs",
    "inner_len",
    "batch_size",
    "schedule",
    "record_potential",
    "max_samples",
];

const TOP_LEVEL_KEYS: &[&str] = &[
    "dataset.path",
    "mdp.states",
    "mdp.actions",
    "mdp.features",
    "mdp.gamma",
    "mdp.seed",
    "mdp.samples",
    "mdp.collect_seed",
    "mdp.collection",
    "solvers",
    "seeds",
    "out",
    "cadence",
    "workers",
    "init",
    "grid",
    "grid.seeds",
    "grid.passes",
    "grid.validation_seed",
    "grid.validation_path",
];

/// Parsed but uninterpreted entries, kept sorted so the echo is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let body = strip_comment(line).trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = split_entry(body).map_err(|msg| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            })?;
            raw.entries.insert(key, value);
        }
        Ok(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, entry: &str) -> Result<()> {
        let (key, value) = split_entry(entry.trim())
            .map_err(|msg| Error::Config(format!("override `{entry}`: {msg}")))?;
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Serializes back to the file grammar; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Solver field lookup with the top-level fallback.
    fn solver_value(&self, label: &str, field: &str) -> Option<(String, &str)> {
        let scoped = format!("solver.{label}.{field}");
        if let Some(v) = self.get(&scoped) {
            return Some((scoped, v));
        }
        self.get(field).map(|v| (field.to_string(), v))
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn split_entry(body: &str) -> Result<(String, String), String> {
    let (key, value) = body
        .split_once('=')
        .ok_or_else(|| "expected `key = value`".to_string())?;
    let key = key.trim();
    let value = strip_comment(value).trim();
    let valid_segment = |s: &str| {
        !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    };
    if !key.split('.').all(valid_segment) {
        return Err(format!("invalid key `{key}`"));
    }
    if value.is_empty() {
        return Err(format!("empty value for `{key}`"));
    }
    Ok((key.to_string(), value.to_string()))
}

/// An absolute count or a multiple of the dataset size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Count {
    Absolute(u64),
    TimesN(f64),
}

impl Count {
    /// `ceil(f * n)` for multiples, ignoring representation error.
    pub fn resolve(self, n: usize) -> u64 {
        match self {
            Count::Absolute(k) => k,
            Count::TimesN(f) => crate::solvers::ceil_tolerant(f * n as f64).max(0.0) as u64,
        }
    }
}

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(f) = s.strip_suffix('n') {
            let f: f64 = if f.is_empty() {
                1.0
            } else {
                f.parse().map_err(|_| format!("bad count `{s}`"))?
            };
            if !(f >= 0.0 && f.is_finite()) {
                return Err(format!("count multiple must be non-negative, got `{s}`"));
            }
            Ok(Count::TimesN(f))
        } else {
            s.parse()
                .map(Count::Absolute)
                .map_err(|_| format!("bad count `{s}`"))
        }
    }
}

/// Step size source for one solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepChoice {
    Fixed {
        sigma_theta: f64,
        sigma_omega: f64,
    },
    /// From the spectral analysis of the dataset.
    Theory,
    /// Chosen by grid search on a validation dataset.
    Tuned,
}

/// Inner-loop length source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerLen {
    Count(Count),
    Theory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Fixed(Count),
    Multiplicative {
        initial: Count,
        growth: f64,
    },
    /// `xi_sq = None` estimates the gradient variance at the zero iterate.
    VarianceDriven {
        xi_sq: Option<f64>,
        alpha: f64,
        rho: f64,
    },
}

impl FromStr for ScheduleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| format!("bad number `{v}` in schedule `{s}`"))
        };
        match parts.as_slice() {
            ["fixed", b] => Ok(ScheduleSpec::Fixed(b.parse()?)),
            ["mult", b0, g] => Ok(ScheduleSpec::Multiplicative {
                initial: b0.parse()?,
                growth: num(g)?,
            }),
            ["variance", xi, alpha, rho] => Ok(ScheduleSpec::VarianceDriven {
                xi_sq: if *xi == "auto" { None } else { Some(num(xi)?) },
                alpha: num(alpha)?,
                rho: num(rho)?,
            }),
            _ => Err(format!(
                "schedule `{s}` is not one of fixed:B, mult:B0:growth, variance:xi2|auto:alpha:rho"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CadenceSpec {
    PerEpoch,
    /// Every `n` samples touched.
    PerPass,
    Every(Count),
}

impl FromStr for CadenceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "epoch" => Ok(CadenceSpec::PerEpoch),
            "samples" | "pass" => Ok(CadenceSpec::PerPass),
            other => match other.strip_prefix("samples:") {
                Some(c) => Ok(CadenceSpec::Every(c.parse()?)),
                None => Err(format!(
                    "cadence `{s}` is not one of epoch, samples, samples:<count>"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitChoice {
    #[default]
    Zero,
    /// `(theta*, 0)`.
    Optimum,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Mdp {
        spec: RandomMdpSpec,
        samples: usize,
        collect_seed: u64,
        collection: Collection,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub label: String,
    pub kind: SolverKind,
    pub steps: StepChoice,
    pub epochs: usize,
    pub inner_len: InnerLen,
    pub batch_size: Count,
    pub schedule: ScheduleSpec,
    pub record_potential: bool,
    pub max_samples: Option<Count>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationSource {
    File(PathBuf),
    /// Same MDP as the experiment, collected with another seed.
    Recollect {
        seed: u64,
    },
    /// The experiment dataset itself.
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub values: Vec<f64>,
    pub seeds: usize,
    /// Budget in multiples of `n` samples touched.
    pub passes: f64,
    pub validation: ValidationSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub solvers: Vec<SolverSpec>,
    pub grid: Option<GridSpec>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub cadence: CadenceSpec,
    pub workers: usize,
    pub init: InitChoice,
    /// Entries the config was built from; echoed next to the results.
    pub raw: RawConfig,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        check_keys(&raw)?;
        let source = DataSource::from_raw(&raw)?;
        let labels = parse_list(raw.get("solvers").unwrap_or(""));
        let solvers = labels
            .iter()
            .map(|l| parse_solver(&raw, l))
            .collect::<Result<Vec<_>>>()?;
        let grid = parse_grid(&raw, &source)?;
        let seeds = match raw.get("seeds") {
            Some(s) => parse_seeds(s)?,
            None => vec![0],
        };
        let cadence = raw
            .get("cadence")
            .map(|c| c.parse().map_err(Error::Config))
            .transpose()?
            .unwrap_or(CadenceSpec::PerEpoch);
        let init = match raw.get("init") {
            None | Some("zero") => InitChoice::Zero,
            Some("optimum") => InitChoice::Optimum,
            Some(other) => {
                return Err(Error::Config(format!(
                    "`init` must be zero or optimum, got `{other}`"
                )))
            }
        };
        let cfg = ExperimentConfig {
            source,
            solvers,
            grid,
            seeds,
            out: raw.get("out").unwrap_or("results").into(),
            cadence,
            workers: raw.parsed("workers")?.unwrap_or(1),
            init,
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::Config(
                "at least one solver is required (`solvers = ...`)".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("`workers` must be at least 1".into()));
        }
        let mut labels: Vec<&str> = self.solvers.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "solver label `{}` listed twice",
                w[0]
            )));
        }
        if let Some(grid) = &self.grid {
            if grid.values.is_empty() {
                return Err(Error::Config("`grid` is empty".into()));
            }
            if let Some(v) = grid.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "grid values must be positive, got {v}"
                )));
            }
            if grid.seeds == 0 || !(grid.passes > 0.0) {
                return Err(Error::Config(
                    "grid search needs positive `grid.seeds` and `grid.passes`".into(),
                ));
            }
        }
        for s in &self.solvers {
            if s.steps == StepChoice::Tuned && self.grid.is_none() {
                return Err(Error::Config(format!(
                    "solver `{}` asks for tuned steps but no `grid` is set",
                    s.label
                )));
            }
        }
        Ok(())
    }
}

fn check_keys(raw: &RawConfig) -> Result<()> {
    for key in raw.keys() {
        let known = TOP_LEVEL_KEYS.contains(&key)
            || SOLVER_FIELDS.contains(&key)
            || key
                .strip_prefix("solver.")
                .and_then(|rest| rest.split_once('.'))
                .is_some_and(|(_, field)| SOLVER_FIELDS.contains(&field));
        if !known {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
    }
    Ok(())
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}

/// `0,1,5` or the half-open range `0..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("`seeds`: cannot parse `{s}`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    parse_list(s)
        .iter()
        .map(|v| v.parse().map_err(|_| bad()))
        .collect()
}

impl DataSource {
    /// Reads `dataset.path` or the `mdp.*` keys.
    pub fn from_raw(raw: &RawConfig) -> Result<DataSource> {
        let has_mdp = raw.keys().any(|k| k.starts_with("mdp."));
        match (raw.get("dataset.path"), has_mdp) {
            (Some(_), true) => Err(Error::Config(
                "set either `dataset.path` or `mdp.*`, not both".into(),
            )),
            (Some(p), false) => Ok(DataSource::File(p.into())),
            (None, false) => Err(Error::Config(
                "no dataset: set `dataset.path` or the `mdp.*` keys".into(),
            )),
            (None, true) => {
                let seed: u64 = raw.parsed("mdp.seed")?.unwrap_or(0);
                let spec = RandomMdpSpec {
                    n_states: raw.required("mdp.states")?,
                    n_actions: raw.required("mdp.actions")?,
                    d: raw.required("mdp.features")?,
                    gamma: raw.parsed("mdp.gamma")?.unwrap_or(0.95),
                    seed,
                };
                spec.validate()?;
                let collection = match raw.get("mdp.collection") {
                    None | Some("trajectory") => Collection::Trajectory,
                    Some("iid") => Collection::Iid,
                    Some(other) => {
                        return Err(Error::Config(format!(
                            "`mdp.collection` must be trajectory or iid, got `{other}`"
                        )))
                    }
                };
                Ok(DataSource::Mdp {
                    spec,
                    samples: raw.required("mdp.samples")?,
                    collect_seed: raw
                        .parsed("mdp.collect_seed")?
                        .unwrap_or(seed.wrapping_add(1)),
                    collection,
                })
            }
        }
    }
}

fn parse_grid(raw: &RawConfig, source: &DataSource) -> Result<Option<GridSpec>> {
    let Some(values) = raw.get("grid") else {
        return Ok(None);
    };
    let values = parse_list(values)
        .iter()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("`grid`: bad value `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let validation = match (
        raw.get("grid.validation_path"),
        raw.parsed::<u64>("grid.validation_seed")?,
        source,
    ) {
        (Some(p), _, _) => ValidationSource::File(p.into()),
        (None, Some(seed), DataSource::Mdp { .. }) => ValidationSource::Recollect { seed },
        (None, None, DataSource::Mdp { collect_seed, .. }) => ValidationSource::Recollect {
            seed: collect_seed.wrapping_add(1000),
        },
        (None, Some(_), DataSource::File(_)) => {
            return Err(Error::Config(
                "`grid.validation_seed` needs an `mdp.*` dataset".into(),
            ))
        }
        (None, None, DataSource::File(_)) => ValidationSource::Same,
    };
    Ok(Some(GridSpec {
        values,
        seeds: raw.parsed("grid.seeds")?.unwrap_or(5),
        passes: raw.parsed("grid.passes")?.unwrap_or(100.0),
        validation,
    }))
}

fn parse_solver(raw: &RawConfig, label: &str) -> Result<SolverSpec> {
    let field = |name: &str| raw.solver_value(label, name);
    let kind = match field("kind") {
        Some((_, v)) => v.parse()?,
        None => label.parse().map_err(|_| {
            Error::Config(format!(
                "solver `{label}` needs `solver.{label}.kind` (its label is not a solver name)"
            ))
        })?,
    };

    let step = |name: &str| -> Result<Option<Result<f64, &'static str>>> {
        match field(name) {
            None => Ok(None),
            Some((_, "theory")) => Ok(Some(Err("theory"))),
            Some((_, "tuned")) => Ok(Some(Err("tuned"))),
            Some((key, v)) => v.parse::<f64>().map(|x| Some(Ok(x))).map_err(|_| {
                Error::Config(format!(
                    "`{key}`: expected a number, `theory` or `tuned`, got `{v}`"
                ))
            }),
        }
    };
    let steps = match (step("sigma_theta")?, step("sigma_omega")?) {
        (Some(Ok(sigma_theta)), Some(Ok(sigma_omega))) => StepChoice::Fixed { sigma_theta, sigma_omega },
        (Some(Err("theory")), Some(Err("theory"))) => StepChoice::Theory,
        (Some(Err("tuned")), Some(Err("tuned"))) | (None, None) => StepChoice::Tuned,
        _ => {
            return Err(Error::Config(format!(
                "solver `{label}`: sigma_theta and sigma_omega must both be numbers, both `theory` or both `tuned`"
            )))
        }
    };

    let mut spec = SolverSpec {
        label: label.to_string(),
        kind,
        steps,
        epochs: 10,
        inner_len: InnerLen::Count(Count::TimesN(1.0)),
        batch_size: Count::TimesN(0.1),
        schedule: ScheduleSpec::Multiplicative {
            initial: Count::TimesN(0.001),
            growth: 1.05,
        },
        record_potential: false,
        max_samples: None,
    };
    if let Some((key, v)) = field("epochs") {
        spec.epochs = v
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: bad epoch count `{v}`")))?;
    }
    if let Some((key, v)) = field("inner_len") {
        spec.inner_len = if v == "theory" {
            InnerLen::Theory
        } else {
            InnerLen::Count(
                v.parse()
                    .map_err(|m| Error::Config(format!("`{key}`: {m}")))?,
            )
        };
    }
    if let Some((key, v)) = field("batch_size") {
        spec.batch_size = v
            .parse()
            .map_err(|m| Error::Config(format!("`{key}`: {m}")))?;
    }
    if let Some((key, v)) = field("schedule") {
        spec.schedule = v
            .parse()
            .map_err(|m| Error::Config(format!("`{key}`: {m}")))?;
    }
    if let Some((key, v)) = field("record_potential") {
        spec.record_potential = v
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: expected true or false")))?;
    }
    if let Some((key, v)) = field("max_samples") {
        spec.max_samples = Some(
            v.parse()
                .map_err(|m| Error::Config(format!("`{key}`: {m}")))?,
        );
    }
    Ok(spec)
}
