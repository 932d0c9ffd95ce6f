//! Hill-climbing structure learning scored by k-fold cross-validated
//! log-likelihood.
//!
//! The score decomposes over nodes, so each (node, parent set, type) triple
//! is fitted once per fold and cached for the whole search.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpd::{Cpd, NodeType};
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::kde::Dataset;
use crate::network::{FitConfig, Spbn, Structure};

/// Which empty starting structures [`best_of_two_starts`] runs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartSet {
    #[default]
    Both,
    LgOnly,
    CkdeOnly,
}

/// How a score delta is compared against `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Improvement {
    /// Raw CV log-likelihood difference.
    #[default]
    Absolute,
    /// Difference divided by the number of rows.
    PerInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HcConfig {
    pub folds: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub fit: FitConfig,
    /// `None` means `10·d²`.
    pub max_iterations: Option<usize>,
    pub starts: StartSet,
    pub improvement: Improvement,
    /// Whether SwitchType moves are part of the neighborhood.
    pub switch_types: bool,
}

impl Default for HcConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            epsilon: 0.01,
            seed: 0,
            fit: FitConfig::default(),
            max_iterations: None,
            starts: StartSet::Both,
            improvement: Improvement::Absolute,
            switch_types: true,
        }
    }
}

impl HcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidSpec("folds must be at least 2".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidSpec("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// A local move. The derived order (kind, then indices) is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operator {
    AddArc(usize, usize),
    RemoveArc(usize, usize),
    FlipArc(usize, usize),
    SwitchType(usize),
}

impl Operator {
    fn rank(&self) -> u8 {
        match self {
            Operator::AddArc(..) => 0,
            Operator::RemoveArc(..) => 1,
            Operator::FlipArc(..) => 2,
            Operator::SwitchType(..) => 3,
        }
    }

    /// Tie-break key: operator kind, then node names.
    fn key<'a>(&self, dag: &'a Dag) -> (u8, &'a str, &'a str) {
        match *self {
            Operator::AddArc(u, v) | Operator::RemoveArc(u, v) | Operator::FlipArc(u, v) => {
                (self.rank(), dag.name(u), dag.name(v))
            }
            Operator::SwitchType(v) => (self.rank(), dag.name(v), ""),
        }
    }

    pub fn describe(&self, dag: &Dag) -> String {
        match *self {
            Operator::AddArc(u, v) => format!("add {} -> {}", dag.name(u), dag.name(v)),
            Operator::RemoveArc(u, v) => format!("remove {} -> {}", dag.name(u), dag.name(v)),
            Operator::FlipArc(u, v) => format!("flip {} -> {}", dag.name(u), dag.name(v)),
            Operator::SwitchType(v) => format!("switch {}", dag.name(v)),
        }
    }

    fn apply(&self, s: &mut Structure) -> Result<()> {
        match *self {
            Operator::AddArc(u, v) => s.dag.add_arc(u, v),
            Operator::RemoveArc(u, v) => s.dag.remove_arc(u, v),
            Operator::FlipArc(u, v) => s.dag.flip_arc(u, v),
            Operator::SwitchType(v) => {
                s.types[v] = s.types[v].other();
                Ok(())
            }
        }
    }
}

/// Row indices of each fold. Depends only on `n`, `k` and `seed`: a seeded
/// shuffle cut into `k` contiguous chunks whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k)
        .map(|f| {
            let mut idx = order[f * n / k..(f + 1) * n / k].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

type NodeKey = (usize, Vec<usize>, NodeType);

/// Cross-validated node scores with memoization.
pub struct CvScorer<'a> {
    data: &'a Dataset,
    nodes: Vec<String>,
    splits: Vec<(Dataset, Dataset)>,
    fit: FitConfig,
    cache: HashMap<NodeKey, std::result::Result<f64, Error>>,
    fits: usize,
}

impl<'a> CvScorer<'a> {
    pub fn new(data: &'a Dataset, nodes: &[String], config: &HcConfig) -> Result<Self> {
        config.validate()?;
        if data.n() < config.folds {
            return Err(Error::InsufficientSamples {
                needed: config.folds,
                got: data.n(),
            });
        }
        for name in nodes {
            data.column_index(name)?;
        }
        let folds = fold_assignment(data.n(), config.folds, config.seed);
        let mut splits = Vec::with_capacity(folds.len());
        for (f, test) in folds.iter().enumerate() {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            splits.push((data.take_rows(&train)?, data.take_rows(test)?));
        }
        Ok(Self {
            data,
            nodes: nodes.to_vec(),
            splits,
            fit: config.fit.clone(),
            cache: HashMap::new(),
            fits: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// Number of distinct (node, parents, type) fits performed so far.
    pub fn fits(&self) -> usize {
        self.fits
    }

    /// Held-out log-likelihood of node `v`, summed over folds.
    pub fn node_score(&mut self, v: usize, parents: &[usize], t: NodeType) -> Result<f64> {
        let key = (v, parents.to_vec(), t);
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let result = self.compute(v, parents, t);
        self.fits += 1;
        self.cache.insert(key, result.clone());
        result
    }

    fn compute(&self, v: usize, parents: &[usize], t: NodeType) -> Result<f64> {
        let child = &self.nodes[v];
        let parent_names: Vec<String> = parents.iter().map(|&p| self.nodes[p].clone()).collect();
        let mut total = 0.0;
        for (fold, (train, test)) in self.splits.iter().enumerate() {
            let fail = |e: Error| Error::FitFailed {
                node: child.clone(),
                fold,
                reason: e.to_string(),
            };
            let cpd = Cpd::fit(
                train,
                child,
                &parent_names,
                t,
                self.fit.selector,
                &self.fit.selector_config,
            )
            .map_err(fail)?;
            total += cpd.logpdf(test).map_err(fail)?.iter().sum::<f64>();
        }
        if total.is_nan() {
            return Err(Error::FitFailed {
                node: child.clone(),
                fold: 0,
                reason: "held-out log-likelihood is NaN".into(),
            });
        }
        Ok(total)
    }

    /// Node score, or −∞ if the node cannot be fitted.
    fn node_score_or_neg_inf(&mut self, v: usize, parents: &[usize], t: NodeType) -> f64 {
        self.node_score(v, parents, t).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn score(&mut self, s: &Structure) -> Result<f64> {
        let mut total = 0.0;
        for v in 0..s.dag.n() {
            total += self.node_score(v, s.dag.parents(v), s.types[v])?;
        }
        Ok(total)
    }
}

/// Cross-validated log-likelihood of `structure` on `data` (higher is better).
pub fn cv_score(data: &Dataset, structure: &Structure, config: &HcConfig) -> Result<f64> {
    CvScorer::new(data, structure.dag.nodes(), config)?.score(structure)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcStep {
    pub operator: String,
    pub delta: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct HcResult {
    pub model: Spbn,
    /// Final cross-validated score.
    pub score: f64,
    pub trace: Vec<HcStep>,
    /// Which start produced the result (`LG` or `CKDE`).
    pub start: NodeType,
}

impl fmt::Display for HcStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (delta {:.6}, score {:.6})", self.operator, self.delta, self.score)
    }
}

fn with_parent(ps: &[usize], u: usize) -> Vec<usize> {
    let mut out = ps.to_vec();
    let at = out.partition_point(|&p| p < u);
    out.insert(at, u);
    out
}

fn without_parent(ps: &[usize], u: usize) -> Vec<usize> {
    ps.iter().copied().filter(|&p| p != u).collect()
}

/// Moves whose deltas differ by less than this fraction of the total score
/// count as tied; Markov-equivalent LG arcs otherwise split on rounding.
const TIE_RTOL: f64 = 1e-10;

fn neighborhood(s: &Structure, switch_types: bool) -> Vec<Operator> {
    let dag = &s.dag;
    let n = dag.n();
    let mut ops = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            if dag.has_arc(u, v) {
                ops.push(Operator::RemoveArc(u, v));
                let mut g = dag.clone();
                if g.flip_arc(u, v).is_ok() {
                    ops.push(Operator::FlipArc(u, v));
                }
            } else if !dag.has_arc(v, u) && !dag.creates_cycle(u, v) {
                ops.push(Operator::AddArc(u, v));
            }
        }
    }
    if switch_types {
        ops.extend((0..n).map(Operator::SwitchType));
    }
    ops
}

fn delta(scorer: &mut CvScorer<'_>, s: &Structure, op: &Operator, current: &[f64]) -> f64 {
    let dag = &s.dag;
    match *op {
        Operator::AddArc(u, v) => {
            scorer.node_score_or_neg_inf(v, &with_parent(dag.parents(v), u), s.types[v]) - current[v]
        }
        Operator::RemoveArc(u, v) => {
            scorer.node_score_or_neg_inf(v, &without_parent(dag.parents(v), u), s.types[v])
                - current[v]
        }
        Operator::FlipArc(u, v) => {
            let nv = scorer.node_score_or_neg_inf(v, &without_parent(dag.parents(v), u), s.types[v]);
            let nu = scorer.node_score_or_neg_inf(u, &with_parent(dag.parents(u), v), s.types[u]);
            (nv - current[v]) + (nu - current[u])
        }
        Operator::SwitchType(v) => {
            scorer.node_score_or_neg_inf(v, dag.parents(v), s.types[v].other()) - current[v]
        }
    }
}

fn climb(scorer: &mut CvScorer<'_>, start: Structure, config: &HcConfig) -> Result<(Structure, f64, Vec<HcStep>)> {
    let mut s = start;
    let n = s.dag.n();
    let mut current = (0..n)
        .map(|v| scorer.node_score(v, s.dag.parents(v), s.types[v]))
        .collect::<Result<Vec<f64>>>()?;
    let max_iterations = config.max_iterations.unwrap_or(10 * n * n);
    let scale = match config.improvement {
        Improvement::Absolute => 1.0,
        Improvement::PerInstance => 1.0 / scorer.n() as f64,
    };
    let mut trace = Vec::new();
    for _ in 0..max_iterations {
        let scored: Vec<(f64, Operator)> = neighborhood(&s, config.switch_types)
            .into_iter()
            .map(|op| (delta(scorer, &s, &op, &current), op))
            .filter(|(d, _)| !d.is_nan())
            .collect();
        let Some(top) = scored.iter().map(|(d, _)| *d).max_by(f64::total_cmp) else {
            break;
        };
        let total: f64 = current.iter().sum();
        let tol = TIE_RTOL * (1.0 + total.abs());
        let Some(&(d, op)) = scored
            .iter()
            .filter(|(d, _)| top - d <= tol || *d == top)
            .min_by(|a, b| a.1.key(&s.dag).cmp(&b.1.key(&s.dag)))
        else {
            break;
        };
        if !(d * scale >= config.epsilon) {
            break;
        }
        let label = op.describe(&s.dag);
        op.apply(&mut s)?;
        for v in 0..n {
            current[v] = scorer.node_score(v, s.dag.parents(v), s.types[v])?;
        }
        trace.push(HcStep {
            operator: label,
            delta: d,
            score: current.iter().sum(),
        });
    }
    let score = current.iter().sum();
    Ok((s, score, trace))
}

/// Greedy best-improvement search from `start`; the returned model is refitted
/// on all of `data`.
pub fn hill_climb(data: &Dataset, start: Structure, config: &HcConfig) -> Result<HcResult> {
    let mut scorer = CvScorer::new(data, start.dag.nodes(), config)?;
    let start_type = start.types.first().copied().unwrap_or(NodeType::Lg);
    let (s, score, trace) = climb(&mut scorer, start, config)?;
    Ok(HcResult {
        model: Spbn::fit(data, s, &config.fit)?,
        score,
        trace,
        start: start_type,
    })
}

/// Runs hill climbing from the empty all-LG and empty all-CKDE structures and
/// keeps the higher CV score; ties go to the LG start.
pub fn best_of_two_starts(data: &Dataset, config: &HcConfig) -> Result<HcResult> {
    let nodes = data.columns().to_vec();
    let mut scorer = CvScorer::new(data, &nodes, config)?;
    let starts: &[NodeType] = match config.starts {
        StartSet::Both => &[NodeType::Lg, NodeType::Ckde],
        StartSet::LgOnly => &[NodeType::Lg],
        StartSet::CkdeOnly => &[NodeType::Ckde],
    };
    let mut best: Option<(Structure, f64, Vec<HcStep>, NodeType)> = None;
    let mut last_err = None;
    for &t in starts {
        match climb(&mut scorer, Structure::empty(nodes.clone(), t)?, config) {
            Ok((s, score, trace)) => {
                if best.as_ref().map_or(true, |b| score > b.1) {
                    best = Some((s, score, trace, t));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((s, score, trace, start)) = best else {
        return Err(last_err.expect("at least one start ran"));
    };
    Ok(HcResult {
        model: Spbn::fit(data, s, &config.fit)?,
        score,
        trace,
        start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn linear(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                vec![a, 2.0 * a + 0.1 * e]
            })
            .collect();
        Dataset::from_rows(names(&["A", "B"]), &rows).unwrap()
    }

    #[test]
    fn folds_partition_rows() {
        let f = fold_assignment(10, 5, 7);
        assert!(f.iter().all(|x| x.len() == 2));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let g = fold_assignment(11, 5, 7);
        assert!(g.iter().all(|x| x.len() == 2 || x.len() == 3));
        assert_eq!(fold_assignment(10, 5, 7), f);
    }

    #[test]
    fn cv_score_is_deterministic() {
        let data = linear(60, 1);
        let s = Structure::empty(names(&["A", "B"]), NodeType::Ckde).unwrap();
        let cfg = HcConfig::default();
        assert_eq!(
            cv_score(&data, &s, &cfg).unwrap().to_bits(),
            cv_score(&data, &s, &cfg).unwrap().to_bits()
        );
    }

    #[test]
    fn fit_failure_names_node_and_fold() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        let data = Dataset::from_rows(names(&["A", "C"]), &rows).unwrap();
        let s = Structure::empty(names(&["A", "C"]), NodeType::Ckde).unwrap();
        match cv_score(&data, &s, &HcConfig::default()) {
            Err(Error::FitFailed { node, fold, .. }) => {
                assert_eq!(node, "C");
                assert_eq!(fold, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infinite_epsilon_keeps_start() {
        let data = linear(100, 2);
        let cfg = HcConfig {
            epsilon: f64::INFINITY,
            ..HcConfig::default()
        };
        let r = hill_climb(&data, Structure::empty(names(&["A", "B"]), NodeType::Lg).unwrap(), &cfg).unwrap();
        assert_eq!(r.model.dag().arc_count(), 0);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn neighborhood_never_proposes_cycles() {
        let dag = Dag::from_arcs(names(&["a", "b", "c"]), &[("a", "b"), ("b", "c")]).unwrap();
        let s = Structure::new(dag, vec![NodeType::Lg; 3]).unwrap();
        for op in neighborhood(&s, true) {
            let mut t = s.clone();
            op.apply(&mut t).unwrap();
            assert_eq!(t.dag.topological_order().len(), 3, "{op:?}");
            assert_ne!(op, Operator::AddArc(2, 0));
        }
    }

    #[test]
    fn accepted_steps_improve_by_epsilon() {
        let data = linear(300, 3);
        let r = best_of_two_starts(&data, &HcConfig::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for step in &r.trace {
            assert!(step.delta >= 0.01);
            assert!(step.score > prev);
            prev = step.score;
        }
        assert_eq!(r.model.dag().arc_count(), 1);
    }
}
