//! The `spbn` command-line tool: bandwidth selection, model fitting and
//! scoring, structure learning, synthetic sampling and replicated experiments.
//!
//! Every command returns its standard output as a string so it can be tested
//! without spawning a process.

pub mod csvio;
pub mod error;
pub mod experiment;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use spbn::selectors::{objective_value, select_bandwidth};
use spbn::stats::{Correction, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use spbn::structure::{Improvement, StartSet};
use spbn::{
    best_of_two_starts, shd, FitConfig, GroundTruthNet, HcConfig, SelectorConfig, SelectorKind, Spbn,
    Structure,
};

use crate::csvio::{dataset_to_csv, fmt_f64, read_dataset, read_text, write_text};
pub use crate::error::{CliError, CliResult};
use crate::experiment::{ExperimentConfig, Scenario};
use crate::report::{Report, ResultTable};

#[derive(Debug, Parser)]
#[command(name = "spbn", version, about = "Semiparametric Bayesian networks with KDE bandwidth selection")]
pub struct Cli {
    /// Worker threads for experiments.
    #[arg(long, global = true, env = "SPBN_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectorArg {
    Nr,
    Ucv,
    Scv,
    Pi,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Nr => SelectorKind::Nr,
            SelectorArg::Ucv => SelectorKind::Ucv,
            SelectorArg::Scv => SelectorKind::Scv,
            SelectorArg::Pi => SelectorKind::Pi,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StartArg {
    Both,
    Lg,
    Ckde,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImprovementArg {
    Absolute,
    PerInstance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorrectionArg {
    BergmannHommel,
    Holm,
}

#[derive(Debug, Args)]
pub struct SelectorOpts {
    #[arg(long, value_enum, default_value = "nr")]
    pub selector: SelectorArg,
    /// Extra UCV runs from shrunken normal-rule starts.
    #[arg(long, default_value_t = SelectorConfig::default().restarts)]
    pub restarts: usize,
}

impl SelectorOpts {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            selector: self.selector.into(),
            selector_config: self.selector_config(),
        }
    }

    fn selector_config(&self) -> SelectorConfig {
        SelectorConfig {
            restarts: self.restarts,
            ..SelectorConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a KDE bandwidth matrix for some columns of a CSV file.
    Select {
        data: PathBuf,
        #[command(flatten)]
        selector: SelectorOpts,
        /// Comma-separated column names; all columns by default. The first
        /// column plays the child role for the normal rule.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        /// Recorded in the output; selection itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a model on a known structure.
    Fit {
        data: PathBuf,
        /// Structure JSON: {nodes, arcs, types}.
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        selector: SelectorOpts,
        /// Model JSON destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn structure and node types by hill climbing.
    Learn {
        data: PathBuf,
        #[command(flatten)]
        selector: SelectorOpts,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "absolute")]
        improvement: ImprovementArg,
        /// Seeds the cross-validation folds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        start: StartArg,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Leave node types as started.
        #[arg(long)]
        no_switch_types: bool,
        /// Structure file or network to report SHD against.
        #[arg(long)]
        truth: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the learned structure file.
        #[arg(long)]
        structure_out: Option<PathBuf>,
    },
    /// Log-likelihood of a CSV file under a fitted model.
    Score {
        model: PathBuf,
        data: PathBuf,
        /// Network whose exact log-likelihood is compared.
        #[arg(long)]
        truth: Option<String>,
        /// Per-row log-likelihoods as CSV.
        #[arg(long)]
        rows_out: Option<PathBuf>,
    },
    /// Sample a built-in or file-defined network, or a fitted model.
    Synth {
        /// smooth5, medium5, rough5, or a density spec file.
        #[arg(required_unless_present = "model", conflicts_with = "model")]
        net: Option<String>,
        /// Fitted model JSON to sample instead.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the network's structure file.
        #[arg(long)]
        structure_out: Option<PathBuf>,
    },
    /// Run a replicated experiment from a JSON config.
    Experiment {
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Medians and pairwise permutation tests for a results CSV.
    Report {
        results: PathBuf,
        /// Directory for report.json, pvalues.csv and medians.csv; the
        /// JSON report is printed when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "bergmann-hommel")]
        correction: CorrectionArg,
    },
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Structure for SHD: a built-in network, a structure file, or a density
/// spec (whose nodes and arcs read as a structure).
fn load_truth_structure(s: &str) -> CliResult<Structure> {
    if spbn::synthetic::BUILTIN_NAMES.contains(&s) {
        return Ok(GroundTruthNet::builtin(s)?.structure().clone());
    }
    Ok(Structure::from_json(&read_text(Path::new(s))?)?)
}

fn load_net(s: &str) -> CliResult<GroundTruthNet> {
    if spbn::synthetic::BUILTIN_NAMES.contains(&s) {
        return Ok(GroundTruthNet::builtin(s)?);
    }
    Ok(GroundTruthNet::from_json(&read_text(Path::new(s))?)?)
}

fn structure_json(s: &Structure) -> Value {
    serde_json::from_str(&s.to_json()).expect("structure json parses")
}

pub fn run(cli: Cli) -> CliResult<String> {
    let jobs = cli.jobs.unwrap_or_else(default_jobs);
    match cli.command {
        Command::Select {
            data,
            selector,
            columns,
            seed,
        } => {
            let mut data = read_dataset(&data)?;
            if let Some(cols) = columns {
                data = data.select(&cols)?;
            }
            let kind: SelectorKind = selector.selector.into();
            let r = select_bandwidth(&data, kind, &selector.selector_config())?;
            let mut out = json!({
                "selector": kind.name(),
                "columns": data.columns(),
                "n": data.n(),
                "seed": seed,
                "bandwidth": r.bandwidth.to_rows(),
                "objective": finite(r.objective),
            });
            if kind != SelectorKind::Nr {
                let nr = spbn::selectors::nr_bandwidth(&data, data.d() - 1)?;
                out["nr_objective"] = finite(objective_value(&data, kind, &nr, r.pilot.as_ref())?);
                out["pilot"] = r.pilot.map_or(Value::Null, |g| json!(g.to_rows()));
                if let Some(d) = r.diagnostics {
                    out["iterations"] = json!(d.iterations);
                    out["converged"] = json!(d.converged);
                }
            }
            Ok(to_json(&out))
        }
        Command::Fit {
            data,
            structure,
            selector,
            out,
        } => {
            let data = read_dataset(&data)?;
            let s = Structure::from_json(&read_text(&structure)?)?;
            let model = Spbn::fit(&data, s, &selector.fit_config())?;
            match out {
                Some(path) => {
                    write_text(&path, &model.to_json())?;
                    let ll = model.logpdf(&data)?;
                    Ok(to_json(&json!({
                        "model": path.display().to_string(),
                        "n": data.n(),
                        "train_loglik": finite(ll),
                    })))
                }
                None => Ok(model.to_json() + "\n"),
            }
        }
        Command::Learn {
            data,
            selector,
            folds,
            epsilon,
            improvement,
            seed,
            start,
            max_iterations,
            no_switch_types,
            truth,
            out,
            structure_out,
        } => {
            let data = read_dataset(&data)?;
            let config = HcConfig {
                folds,
                epsilon,
                seed,
                fit: selector.fit_config(),
                max_iterations,
                starts: match start {
                    StartArg::Both => StartSet::Both,
                    StartArg::Lg => StartSet::LgOnly,
                    StartArg::Ckde => StartSet::CkdeOnly,
                },
                improvement: match improvement {
                    ImprovementArg::Absolute => Improvement::Absolute,
                    ImprovementArg::PerInstance => Improvement::PerInstance,
                },
                switch_types: !no_switch_types,
            };
            config.validate()?;
            let truth = truth.as_deref().map(load_truth_structure).transpose()?;
            let result = best_of_two_starts(&data, &config)?;
            let model = &result.model;
            let mut summary = json!({
                "score": finite(result.score),
                "start": result.start.name(),
                "structure": structure_json(model.structure()),
                "iterations": result.trace.len(),
                "trace": result.trace.iter().map(|s| json!({
                    "operator": s.operator,
                    "delta": s.delta,
                    "score": s.score,
                })).collect::<Vec<_>>(),
            });
            if let Some(t) = truth {
                summary["shd"] = json!(shd(model.dag(), &t.dag)?);
            }
            if let Some(path) = &out {
                write_text(path, &model.to_json())?;
                summary["model"] = json!(path.display().to_string());
            }
            if let Some(path) = &structure_out {
                write_text(path, &model.structure().to_json())?;
            }
            Ok(to_json(&summary))
        }
        Command::Score {
            model,
            data,
            truth,
            rows_out,
        } => {
            let model = Spbn::from_json(&read_text(&model)?)?;
            let data = read_dataset(&data)?;
            let rows = model.logpdf_rows(&data)?;
            let total: f64 = rows.iter().sum();
            let mut out = json!({
                "n": data.n(),
                "loglik": finite(total),
                "mean_loglik": finite(total / data.n() as f64),
            });
            if let Some(t) = truth {
                let net = load_net(&t)?;
                let exact = net.logpdf(&data)?;
                out["truth_loglik"] = finite(exact);
                out["loglik_abs_error"] = finite((total - exact).abs());
            }
            if let Some(path) = rows_out {
                let mut csv = String::from("row,loglik\n");
                for (i, v) in rows.iter().enumerate() {
                    csv.push_str(&format!("{},{}\n", i + 1, fmt_f64(*v)));
                }
                write_text(&path, &csv)?;
            }
            Ok(to_json(&out))
        }
        Command::Synth {
            net,
            model,
            n,
            seed,
            out,
            structure_out,
        } => {
            if n == 0 {
                return Err(CliError::Usage("--n must be positive".into()));
            }
            let (data, structure) = match (net, model) {
                (Some(name), _) => {
                    let net = load_net(&name)?;
                    (net.sample(n, seed)?, net.structure().clone())
                }
                (None, Some(path)) => {
                    let m = Spbn::from_json(&read_text(&path)?)?;
                    (m.sample(n, seed)?, m.structure().clone())
                }
                (None, None) => return Err(CliError::Usage("give a network or --model".into())),
            };
            if let Some(path) = structure_out {
                write_text(&path, &structure.to_json())?;
            }
            let csv = dataset_to_csv(&data);
            match out {
                Some(path) => {
                    write_text(&path, &csv)?;
                    Ok(String::new())
                }
                None => Ok(csv),
            }
        }
        Command::Experiment { config, out } => {
            let text = read_text(&config)?;
            let parsed = ExperimentConfig::from_json(&text)?;
            let base = config.parent();
            let dir = match (out, &parsed.output_dir) {
                (Some(d), _) => d,
                (None, Some(d)) => base.map_or_else(|| PathBuf::from(d), |b| b.join(d)),
                (None, None) => {
                    return Err(CliError::Usage(
                        "no output directory: pass --out or set `output_dir`".into(),
                    ))
                }
            };
            let scenario = Scenario::load(&parsed, base)?;
            let result = experiment::run(&parsed, &scenario, jobs)?;
            write_text(&dir.join("results.csv"), &result.table.to_csv())?;
            write_text(&dir.join("timings.csv"), &result.timings_csv)?;
            result.report.write(&dir)?;
            Ok(to_json(&json!({
                "output_dir": dir.display().to_string(),
                "rows": result.table.rows.len(),
                "failures": result.failures,
            })))
        }
        Command::Report {
            results,
            out,
            n_perm,
            seed,
            alpha,
            correction,
        } => {
            let table = ResultTable::from_csv(&read_text(&results)?, &results.display().to_string())?;
            let correction = match correction {
                CorrectionArg::BergmannHommel => Correction::BergmannHommel,
                CorrectionArg::Holm => Correction::Holm,
            };
            let report = Report::build(&table, n_perm, seed, alpha, correction)?;
            match out {
                Some(dir) => {
                    report.write(&dir)?;
                    Ok(String::new())
                }
                None => Ok(report.to_json() + "\n"),
            }
        }
    }
}
