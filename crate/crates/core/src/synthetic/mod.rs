//! Known generative densities used as ground truth in experiments.
//!
//! A [`GroundTruthNet`] is a DAG whose nodes carry explicit conditional
//! densities: Gaussians, fixed mixtures and mixtures whose weights and means
//! are expressions of the parent values (see [`expr`] for the grammar).
//! Networks are described by a JSON document:
//!
//! ```json
//! {
//!   "name": "example",
//!   "nodes": ["A", "B"],
//!   "arcs": [["A", "B"]],
//!   "types": {"A": "LG", "B": "CKDE"},
//!   "factors": {
//!     "A": {"kind": "fixed_mixture", "weights": [0.5, 0.5], "means": [-2, 2], "variances": [1, 1]},
//!     "B": {"kind": "gaussian", "mean": "A^2", "variance": 0.25}
//!   }
//! }
//! ```
//!
//! `input_weighted_mixture` factors take `weights` and `means` as lists of
//! expressions plus numeric `variances`. Raw weights are normalized by their
//! sum; where every raw weight is zero the components are weighted uniformly.
//! `types` are the node types used when a model is fit on this structure and
//! default to LG.

pub mod expr;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cpd::NodeType;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::kde::Dataset;
use crate::network::{Spbn, Structure};

pub use expr::Expr;

const SMOOTH5: &str = include_str!("../../specs/smooth5.json");
const MEDIUM5: &str = include_str!("../../specs/medium5.json");
const ROUGH5: &str = include_str!("../../specs/rough5.json");

pub const BUILTIN_NAMES: [&str; 3] = ["smooth5", "medium5", "rough5"];

/// A number or an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Number(f64),
    Expr(String),
}

impl Term {
    fn compile<S: AsRef<str>>(&self, parents: &[S]) -> Result<Expr> {
        match self {
            Term::Number(v) => Ok(Expr::constant(*v)),
            Term::Expr(s) => Expr::parse(s, parents),
        }
    }
}

/// Declarative form of one conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionalSpec {
    Gaussian {
        mean: Term,
        variance: f64,
    },
    FixedMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    InputWeightedMixture {
        weights: Vec<Term>,
        means: Vec<Term>,
        variances: Vec<f64>,
    },
}

/// Compiled conditional density: a mixture of Gaussians with weights and
/// means evaluated from the parent values.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    weights: Vec<Expr>,
    means: Vec<Expr>,
    variances: Vec<f64>,
    // Constant weights already normalized at compile time.
    fixed_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

fn normalize(raw: &mut [f64]) -> Result<()> {
    // Overflowed weights share the mass equally.
    if raw.iter().any(|w| *w == f64::INFINITY) {
        raw.iter_mut()
            .for_each(|w| *w = if *w == f64::INFINITY { 1.0 } else { 0.0 });
    }
    if let Some(w) = raw.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidSpec(format!(
            "mixture weight must be finite and non-negative, got {w}"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let u = 1.0 / raw.len() as f64;
        raw.iter_mut().for_each(|w| *w = u);
    } else {
        raw.iter_mut().for_each(|w| *w /= total);
    }
    Ok(())
}

impl Factor {
    pub fn compile<S: AsRef<str>>(spec: &ConditionalSpec, parents: &[S]) -> Result<Self> {
        let (weights, means, variances, fixed) = match spec {
            ConditionalSpec::Gaussian { mean, variance } => (
                vec![Expr::constant(1.0)],
                vec![mean.compile(parents)?],
                vec![*variance],
                Some(vec![1.0]),
            ),
            ConditionalSpec::FixedMixture {
                weights,
                means,
                variances,
            } => {
                let mut w = weights.clone();
                if w.is_empty() {
                    return Err(Error::InvalidSpec("mixture has no components".into()));
                }
                normalize(&mut w)?;
                (
                    weights.iter().map(|&v| Expr::constant(v)).collect(),
                    means.iter().map(|&m| Expr::constant(m)).collect(),
                    variances.clone(),
                    Some(w),
                )
            }
            ConditionalSpec::InputWeightedMixture {
                weights,
                means,
                variances,
            } => (
                weights
                    .iter()
                    .map(|w| w.compile(parents))
                    .collect::<Result<_>>()?,
                means
                    .iter()
                    .map(|m| m.compile(parents))
                    .collect::<Result<_>>()?,
                variances.clone(),
                None,
            ),
        };
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidSpec(format!(
                "mixture needs equally many weights, means and variances (got {}, {}, {})",
                k,
                means.len(),
                variances.len()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "variance must be positive and finite, got {v}"
            )));
        }
        Ok(Self {
            weights,
            means,
            variances,
            fixed_weights: fixed,
        })
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    /// Normalized mixture weights at the given parent values.
    pub fn weights(&self, parents: &[f64]) -> Result<Vec<f64>> {
        if let Some(w) = &self.fixed_weights {
            return Ok(w.clone());
        }
        let mut w: Vec<f64> = self.weights.iter().map(|e| e.eval(parents)).collect();
        normalize(&mut w)?;
        Ok(w)
    }

    pub fn components(&self, parents: &[f64]) -> Result<Vec<Component>> {
        let w = self.weights(parents)?;
        let mut out = Vec::with_capacity(self.len());
        for (k, weight) in w.into_iter().enumerate() {
            let mean = self.means[k].eval(parents);
            if !mean.is_finite() {
                return Err(Error::NonFinite("mixture mean"));
            }
            out.push(Component {
                weight,
                mean,
                variance: self.variances[k],
            });
        }
        Ok(out)
    }

    pub fn logpdf(&self, x: f64, parents: &[f64]) -> Result<f64> {
        let comps = self.components(parents)?;
        let terms: Vec<f64> = comps
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + normal_logpdf(x, c.mean, c.variance))
            .collect();
        Ok(crate::kde::log_sum_exp(&terms))
    }

    pub fn sample<R: Rng + ?Sized>(&self, parents: &[f64], rng: &mut R) -> Result<f64> {
        let comps = self.components(parents)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (k, c) in comps.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let c = comps[chosen];
        let z: f64 = rng.sample(StandardNormal);
        Ok(c.mean + c.variance.sqrt() * z)
    }
}

fn normal_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + r * r / variance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetSpec {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    nodes: Vec<String>,
    arcs: Vec<[String; 2]>,
    #[serde(default)]
    types: BTreeMap<String, NodeType>,
    factors: BTreeMap<String, ConditionalSpec>,
}

/// A network of explicit conditional densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthNet {
    spec: NetSpec,
    structure: Structure,
    factors: Vec<Factor>,
}

impl GroundTruthNet {
    /// One of `smooth5`, `medium5` or `rough5`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "smooth5" => Self::from_json(SMOOTH5),
            "medium5" => Self::from_json(MEDIUM5),
            "rough5" => Self::from_json(ROUGH5),
            other => Err(Error::InvalidSpec(format!(
                "unknown ground truth `{other}` (built-in: {})",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    /// A built-in name or a path to a density spec file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if BUILTIN_NAMES.contains(&name_or_path) {
            return Self::builtin(name_or_path);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| Error::InvalidSpec(format!("{name_or_path}: {e}")))?;
        Self::from_json(&text)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetSpec = serde_json::from_str(s)?;
        Self::from_spec(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("spec serializes")
    }

    fn from_spec(spec: NetSpec) -> Result<Self> {
        let arcs: Vec<(&str, &str)> = spec
            .arcs
            .iter()
            .map(|[u, v]| (u.as_str(), v.as_str()))
            .collect();
        let dag = Dag::from_arcs(spec.nodes.clone(), &arcs)?;
        for name in spec.types.keys().chain(spec.factors.keys()) {
            dag.index_of(name)?;
        }
        let types = dag
            .nodes()
            .iter()
            .map(|n| spec.types.get(n).copied().unwrap_or(NodeType::Lg))
            .collect();
        let structure = Structure::new(dag, types)?;
        let dag = &structure.dag;
        let mut factors = Vec::with_capacity(dag.n());
        for v in 0..dag.n() {
            let name = dag.name(v);
            let fs = spec
                .factors
                .get(name)
                .ok_or_else(|| Error::InvalidSpec(format!("no factor for node `{name}`")))?;
            let parents = dag.parent_names(v);
            let factor = Factor::compile(fs, &parents)
                .map_err(|e| Error::InvalidSpec(format!("node `{name}`: {e}")))?;
            factors.push(factor);
        }
        Ok(Self {
            spec,
            structure,
            factors,
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn dag(&self) -> &Dag {
        &self.structure.dag
    }

    pub fn nodes(&self) -> &[String] {
        self.structure.dag.nodes()
    }

    /// True DAG with the node types a model should use for it.
    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn factor(&self, v: usize) -> &Factor {
        &self.factors[v]
    }

    /// Ancestral sampling; deterministic for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let dag = self.dag();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![vec![0.0; n]; dag.n()];
        let order = dag.topological_order();
        let mut pa = Vec::new();
        for i in 0..n {
            for &v in &order {
                pa.clear();
                pa.extend(dag.parents(v).iter().map(|&p| cols[p][i]));
                cols[v][i] = self.factors[v].sample(&pa, &mut rng)?;
            }
        }
        Dataset::from_columns(self.nodes().to_vec(), &cols)
    }

    /// Per-node log densities at one row given in node order.
    pub fn factor_logpdfs(&self, row: &[f64]) -> Result<Vec<f64>> {
        let dag = self.dag();
        if row.len() != dag.n() {
            return Err(Error::DimensionMismatch {
                expected: dag.n(),
                got: row.len(),
            });
        }
        let mut pa = Vec::new();
        (0..dag.n())
            .map(|v| {
                pa.clear();
                pa.extend(dag.parents(v).iter().map(|&p| row[p]));
                self.factors[v].logpdf(row[v], &pa)
            })
            .collect()
    }

    /// Log density of every row; columns are matched by name.
    pub fn logpdf_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        let idx = self
            .nodes()
            .iter()
            .map(|n| {
                data.column_index(n).map_err(|_| Error::DimensionMismatch {
                    expected: self.nodes().len(),
                    got: data.d(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row = vec![0.0; idx.len()];
        data.rows()
            .map(|r| {
                for (dst, &j) in row.iter_mut().zip(&idx) {
                    *dst = r[j];
                }
                Ok(self.factor_logpdfs(&row)?.iter().sum())
            })
            .collect()
    }

    pub fn logpdf(&self, data: &Dataset) -> Result<f64> {
        Ok(self.logpdf_rows(data)?.iter().sum())
    }
}

/// |model log-likelihood − true log-likelihood| on `validation`.
pub fn loglik_abs_error(net: &GroundTruthNet, model: &Spbn, validation: &Dataset) -> Result<f64> {
    let mut a = net.nodes().to_vec();
    let mut b = model.dag().nodes().to_vec();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::NodeSetMismatch);
    }
    let truth = net.logpdf(validation)?;
    let fitted = model.logpdf(validation)?;
    Ok((fitted - truth).abs())
}
