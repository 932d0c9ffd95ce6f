//! Replicated experiments: sample or subsample training data, fit or learn a
//! model per method, and score it on held-out data.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spbn::stats::{Correction, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use spbn::structure::Improvement;
use spbn::{
    best_of_two_starts, shd, Dataset, FitConfig, GroundTruthNet, HcConfig, SelectorConfig,
    SelectorKind, Spbn, Structure,
};

use crate::csvio::{fmt_f64, read_dataset, read_text};
use crate::error::{CliError, CliResult};
use crate::report::{Report, ResultTable};

/// A selector pair: the first drives structure learning, the second fits the
/// final parameters. `NR` alone means `NR-NR`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Method {
    pub structure: SelectorKind,
    pub parameters: SelectorKind,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.structure == self.parameters {
            write!(f, "{}", self.structure)
        } else {
            write!(f, "{}-{}", self.structure, self.parameters)
        }
    }
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let parse = |t: &str| {
            t.parse::<SelectorKind>()
                .map_err(|_| CliError::Usage(format!("unknown selector `{t}` in method `{s}`")))
        };
        match s.split_once('-') {
            Some((a, b)) => Ok(Method {
                structure: parse(a)?,
                parameters: parse(b)?,
            }),
            None => {
                let k = parse(s)?;
                Ok(Method {
                    structure: k,
                    parameters: k,
                })
            }
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Hill climbing from both empty starts.
    #[default]
    Learn,
    /// Fit parameters on a known structure.
    Fixed,
}

fn default_replicates() -> usize {
    10
}
fn default_validation() -> usize {
    1000
}
fn default_folds() -> usize {
    5
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_correction() -> Correction {
    Correction::BergmannHommel
}
fn default_restarts() -> usize {
    SelectorConfig::default().restarts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in network name, density spec file, or a CSV file to subsample.
    pub scenario: String,
    pub sizes: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_validation")]
    pub validation_size: usize,
    pub selectors: Vec<Method>,
    #[serde(default)]
    pub mode: Mode,
    /// Structure file for fixed mode on a CSV scenario.
    #[serde(default)]
    pub structure: Option<String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub improvement: Improvement,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_correction")]
    pub correction: Correction,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("experiment config: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Data(format!("experiment config: {m}")));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a non-empty list of positive integers");
        }
        if self.selectors.is_empty() {
            return bad("selectors must not be empty");
        }
        if self.validation_size == 0 {
            return bad("validation_size must be positive");
        }
        if self.mode == Mode::Fixed && self.selectors.iter().any(|m| m.structure != m.parameters) {
            return bad("paired methods such as NR-SCV need mode `learn`");
        }
        let mut seen = self.selectors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.selectors.len() {
            return bad("selectors contain duplicates");
        }
        Ok(())
    }

    fn hc_config(&self, selector: SelectorKind, seed: u64) -> HcConfig {
        HcConfig {
            folds: self.folds,
            epsilon: self.epsilon,
            seed,
            fit: self.fit_config(selector),
            improvement: self.improvement,
            ..HcConfig::default()
        }
    }

    fn fit_config(&self, selector: SelectorKind) -> FitConfig {
        FitConfig {
            selector,
            selector_config: SelectorConfig {
                restarts: self.restarts,
                ..SelectorConfig::default()
            },
        }
    }
}

/// Where data come from and what ground truth is known.
pub enum Scenario {
    Net(GroundTruthNet),
    Table {
        data: Dataset,
        structure: Option<Structure>,
    },
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    match base {
        Some(dir) if Path::new(p).is_relative() => dir.join(p),
        _ => PathBuf::from(p),
    }
}

impl Scenario {
    /// Relative paths are taken from `base` (the config file's directory).
    pub fn load(config: &ExperimentConfig, base: Option<&Path>) -> CliResult<Self> {
        let s = &config.scenario;
        if s.to_ascii_lowercase().ends_with(".csv") {
            let data = read_dataset(&resolve(base, s))?;
            let structure = match &config.structure {
                Some(p) => Some(Structure::from_json(&read_text(&resolve(base, p))?)?),
                None => None,
            };
            if config.mode == Mode::Fixed && structure.is_none() {
                return Err(CliError::Data(
                    "experiment config: fixed mode on a CSV scenario needs `structure`".into(),
                ));
            }
            return Ok(Scenario::Table { data, structure });
        }
        if config.structure.is_some() {
            return Err(CliError::Data(
                "experiment config: `structure` is only used with CSV scenarios".into(),
            ));
        }
        let net = if spbn::synthetic::BUILTIN_NAMES.contains(&s.as_str()) {
            GroundTruthNet::builtin(s)?
        } else {
            GroundTruthNet::from_json(&read_text(&resolve(base, s))?)?
        };
        Ok(Scenario::Net(net))
    }

    fn has_truth(&self) -> bool {
        matches!(self, Scenario::Net(_))
    }

    fn known_structure(&self) -> Option<&Structure> {
        match self {
            Scenario::Net(net) => Some(net.structure()),
            Scenario::Table { structure, .. } => structure.as_ref(),
        }
    }

    /// Training and validation sets for one (size, replicate) cell.
    fn split(&self, n: usize, validation: usize, seed: u64) -> CliResult<(Dataset, Dataset)> {
        match self {
            Scenario::Net(net) => Ok((
                net.sample(n, derive_seed(seed, &[1]))?,
                net.sample(validation, derive_seed(seed, &[2]))?,
            )),
            Scenario::Table { data, .. } => {
                if n + validation > data.n() {
                    return Err(CliError::Data(format!(
                        "scenario has {} rows, fewer than size {n} plus validation {validation}",
                        data.n()
                    )));
                }
                let mut idx: Vec<usize> = (0..data.n()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1])));
                Ok((data.take_rows(&idx[..n])?, data.take_rows(&idx[n..n + validation])?))
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base` so nearby inputs give unrelated seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ p))
}

/// One (method, size, replicate) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub n: usize,
    pub replicate: usize,
    /// `ok`, or the failure class (`numeric`, `data`).
    pub status: String,
    pub metrics: Vec<f64>,
    pub seconds: f64,
}

pub struct ExperimentOutput {
    pub table: ResultTable,
    pub timings_csv: String,
    pub report: Report,
    pub failures: Vec<String>,
}

fn metric_names(scenario: &Scenario, mode: Mode) -> Vec<String> {
    let mut names = vec!["validation_loglik".to_string()];
    if scenario.has_truth() {
        names.push("loglik_abs_error".into());
        if mode == Mode::Learn {
            names.push("shd".into());
        }
    }
    names
}

fn run_cell(
    config: &ExperimentConfig,
    scenario: &Scenario,
    method: Method,
    n: usize,
    replicate: usize,
) -> CliResult<Vec<f64>> {
    let cell_seed = derive_seed(config.seed, &[n as u64, replicate as u64]);
    let (train, valid) = scenario.split(n, config.validation_size, cell_seed)?;
    let model = match config.mode {
        Mode::Fixed => {
            let s = scenario.known_structure().expect("checked at load").clone();
            Spbn::fit(&train, s, &config.fit_config(method.parameters))?
        }
        Mode::Learn => {
            let hc = config.hc_config(method.structure, derive_seed(cell_seed, &[3]));
            let learned = best_of_two_starts(&train, &hc)?.model;
            if method.parameters == method.structure {
                learned
            } else {
                let s = learned.structure().clone();
                Spbn::fit(&train, s, &config.fit_config(method.parameters))?
            }
        }
    };
    let ll = model.logpdf(&valid)?;
    if !ll.is_finite() {
        return Err(CliError::Numeric("validation log-likelihood is not finite".into()));
    }
    let mut metrics = vec![ll];
    if let Scenario::Net(net) = scenario {
        metrics.push((ll - net.logpdf(&valid)?).abs());
        if config.mode == Mode::Learn {
            metrics.push(shd(model.dag(), net.dag())? as f64);
        }
    }
    Ok(metrics)
}

/// Runs every cell on a pool of `jobs` threads. Rows come back sorted by
/// (method, size, replicate) whatever the scheduling.
pub fn run(config: &ExperimentConfig, scenario: &Scenario, jobs: usize) -> CliResult<ExperimentOutput> {
    config.validate()?;
    let names = metric_names(scenario, config.mode);
    let mut cells = Vec::new();
    for &m in &config.selectors {
        for &n in &config.sizes {
            for r in 0..config.replicates {
                cells.push((m, n, r));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let outcomes: Vec<(Row, Option<String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, n, r)| {
                let start = Instant::now();
                let result = run_cell(config, scenario, m, n, r);
                let seconds = start.elapsed().as_secs_f64();
                let (status, metrics, failure) = match result {
                    Ok(v) => ("ok".to_string(), v, None),
                    Err(e) => {
                        let class = if e.exit_code() == 3 { "numeric" } else { "data" };
                        let msg = format!("{m} N={n} replicate {r}: {e}");
                        (class.to_string(), vec![f64::NAN; names.len()], Some(msg))
                    }
                };
                let row = Row {
                    method: m.to_string(),
                    n,
                    replicate: r,
                    status,
                    metrics,
                    seconds,
                };
                (row, failure)
            })
            .collect()
    });
    let mut rows: Vec<Row> = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (row, failure) in outcomes {
        rows.push(row);
        failures.extend(failure);
    }
    rows.sort_by(|a, b| (&a.method, a.n, a.replicate).cmp(&(&b.method, b.n, b.replicate)));
    // Data errors (a CSV too short for the sizes) are the same in every cell.
    if !rows.is_empty() && rows.iter().all(|r| r.status == "data") {
        return Err(CliError::Data(failures[0].clone()));
    }

    let mut timings_csv = String::from("selector,n,replicate,wall_time\n");
    for r in &rows {
        timings_csv.push_str(&format!("{},{},{},{}\n", r.method, r.n, r.replicate, fmt_f64(r.seconds)));
    }
    let table = ResultTable { metrics: names, rows };
    let report = Report::build(
        &table,
        config.n_permutations,
        config.seed,
        config.alpha,
        config.correction,
    )?;
    Ok(ExperimentOutput {
        table,
        timings_csv,
        report,
        failures,
    })
}
