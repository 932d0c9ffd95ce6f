//! Semiparametric Bayesian networks: a DAG whose nodes carry LG or CKDE CPDs.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpd::{Cpd, CpdRepr, NodeType};
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::kde::Dataset;
use crate::selectors::{SelectorConfig, SelectorKind};

/// How CKDE nodes choose their bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitConfig {
    pub selector: SelectorKind,
    #[serde(default)]
    pub selector_config: SelectorConfig,
}

/// A DAG plus a node type per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StructureRepr", into = "StructureRepr")]
pub struct Structure {
    pub dag: Dag,
    pub types: Vec<NodeType>,
}

#[derive(Serialize, Deserialize)]
struct StructureRepr {
    nodes: Vec<String>,
    arcs: Vec<[String; 2]>,
    #[serde(default)]
    types: BTreeMap<String, NodeType>,
}

impl TryFrom<StructureRepr> for Structure {
    type Error = Error;
    fn try_from(r: StructureRepr) -> Result<Self> {
        let arcs: Vec<(String, String)> = r.arcs.into_iter().map(|[u, v]| (u, v)).collect();
        let dag = Dag::from_arcs(r.nodes, &arcs)?;
        for name in r.types.keys() {
            dag.index_of(name)?;
        }
        // Nodes without an explicit type default to LG.
        let types = dag
            .nodes()
            .iter()
            .map(|n| r.types.get(n).copied().unwrap_or(NodeType::Lg))
            .collect();
        Ok(Structure { dag, types })
    }
}

impl From<Structure> for StructureRepr {
    fn from(s: Structure) -> Self {
        StructureRepr {
            arcs: s
                .dag
                .arc_names()
                .into_iter()
                .map(|(u, v)| [u.to_string(), v.to_string()])
                .collect(),
            types: s
                .dag
                .nodes()
                .iter()
                .cloned()
                .zip(s.types.iter().copied())
                .collect(),
            nodes: s.dag.nodes().to_vec(),
        }
    }
}

impl Structure {
    pub fn new(dag: Dag, types: Vec<NodeType>) -> Result<Self> {
        if types.len() != dag.n() {
            return Err(Error::DimensionMismatch {
                expected: dag.n(),
                got: types.len(),
            });
        }
        Ok(Self { dag, types })
    }

    /// No arcs, every node of type `t`.
    pub fn empty(nodes: Vec<String>, t: NodeType) -> Result<Self> {
        let dag = Dag::empty(nodes)?;
        let types = vec![t; dag.n()];
        Ok(Self { dag, types })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serializes")
    }
}

/// Fits the CPD of node `v` under `structure`.
pub fn fit_node(data: &Dataset, structure: &Structure, v: usize, config: &FitConfig) -> Result<Cpd> {
    let dag = &structure.dag;
    Cpd::fit(
        data,
        dag.name(v),
        &dag.parent_names(v),
        structure.types[v],
        config.selector,
        &config.selector_config,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spbn {
    structure: Structure,
    cpds: Vec<Cpd>,
}

impl Spbn {
    /// Fits every CPD of `structure` on `data`.
    pub fn fit(data: &Dataset, structure: Structure, config: &FitConfig) -> Result<Self> {
        let cpds = (0..structure.dag.n())
            .map(|v| fit_node(data, &structure, v, config))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(structure, cpds)
    }

    /// Checks that each CPD matches its node's name, type and parents.
    pub fn from_parts(structure: Structure, cpds: Vec<Cpd>) -> Result<Self> {
        let dag = &structure.dag;
        if cpds.len() != dag.n() {
            return Err(Error::DimensionMismatch {
                expected: dag.n(),
                got: cpds.len(),
            });
        }
        for (v, cpd) in cpds.iter().enumerate() {
            if cpd.child() != dag.name(v)
                || cpd.node_type() != structure.types[v]
                || cpd.parents() != dag.parent_names(v).as_slice()
            {
                return Err(Error::InvalidSpec(format!(
                    "CPD for `{}` does not match the structure",
                    dag.name(v)
                )));
            }
        }
        Ok(Self { structure, cpds })
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn dag(&self) -> &Dag {
        &self.structure.dag
    }

    pub fn types(&self) -> &[NodeType] {
        &self.structure.types
    }

    pub fn cpds(&self) -> &[Cpd] {
        &self.cpds
    }

    pub fn cpd(&self, name: &str) -> Result<&Cpd> {
        Ok(&self.cpds[self.dag().index_of(name)?])
    }

    /// Per-row joint log density `Σ_v log f(x_v | pa_v)`.
    pub fn logpdf_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut rows = vec![0.0; data.n()];
        for cpd in &self.cpds {
            for (acc, v) in rows.iter_mut().zip(cpd.logpdf(data)?) {
                *acc += v;
            }
        }
        Ok(rows)
    }

    /// Total log-likelihood of `data`.
    pub fn logpdf(&self, data: &Dataset) -> Result<f64> {
        Ok(self.logpdf_rows(data)?.iter().sum())
    }

    /// Ancestral sampling in topological order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let dag = self.dag();
        let d = dag.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![vec![0.0; n]; d];
        let mut pa = Vec::new();
        for v in dag.topological_order() {
            let parents = dag.parents(v);
            for i in 0..n {
                pa.clear();
                pa.extend(parents.iter().map(|&p| cols[p][i]));
                cols[v][i] = self.cpds[v].sample_given(&pa, &mut rng)?;
            }
        }
        Dataset::from_columns(dag.nodes().to_vec(), &cols)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SpbnRepr::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<SpbnRepr>(s)?.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct SpbnRepr {
    #[serde(flatten)]
    structure: Structure,
    cpds: BTreeMap<String, CpdRepr>,
}

impl From<&Spbn> for SpbnRepr {
    fn from(m: &Spbn) -> Self {
        SpbnRepr {
            structure: m.structure.clone(),
            cpds: m
                .cpds
                .iter()
                .map(|c| (c.child().to_string(), CpdRepr::from(c)))
                .collect(),
        }
    }
}

impl TryFrom<SpbnRepr> for Spbn {
    type Error = Error;
    fn try_from(mut r: SpbnRepr) -> Result<Self> {
        let mut cpds = Vec::with_capacity(r.structure.dag.n());
        for name in r.structure.dag.nodes() {
            let repr = r
                .cpds
                .remove(name)
                .ok_or_else(|| Error::InvalidSpec(format!("missing CPD for `{name}`")))?;
            cpds.push(repr.into_cpd(name)?);
        }
        if let Some(extra) = r.cpds.keys().next() {
            return Err(Error::UnknownVariable(extra.clone()));
        }
        Spbn::from_parts(r.structure, cpds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn linear_pair(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                vec![a, 2.0 * a + 0.5 * e]
            })
            .collect();
        Dataset::from_rows(names(&["A", "B"]), &rows).unwrap()
    }

    #[test]
    fn empty_lg_graph_is_sum_of_marginals() {
        let data = linear_pair(50, 1);
        let s = Structure::empty(names(&["A", "B"]), NodeType::Lg).unwrap();
        let m = Spbn::fit(&data, s, &FitConfig::default()).unwrap();
        let mut want = 0.0;
        for name in ["A", "B"] {
            let col = data.column(data.column_index(name).unwrap());
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 50.0;
            want += col
                .iter()
                .map(|x| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var))
                .sum::<f64>();
        }
        assert_relative_eq!(m.logpdf(&data).unwrap(), want, epsilon = 1e-9);
    }

    #[test]
    fn markov_equivalent_lg_chains_score_equal() {
        let data = linear_pair(200, 2);
        let fit = |u: &str, v: &str| {
            let dag = Dag::from_arcs(names(&["A", "B"]), &[(u, v)]).unwrap();
            let s = Structure::new(dag, vec![NodeType::Lg; 2]).unwrap();
            Spbn::fit(&data, s, &FitConfig::default()).unwrap().logpdf(&data).unwrap()
        };
        assert_relative_eq!(fit("A", "B"), fit("B", "A"), epsilon = 1e-8);
    }

    #[test]
    fn single_ckde_node_one_point() {
        let data = Dataset::univariate("X", &[0.0]).unwrap();
        let cpd = crate::cpd::CkdeCpd::from_parts(
            "X",
            &[],
            SelectorKind::Nr,
            data.clone(),
            crate::linalg::SpdMatrix::identity(1),
        )
        .unwrap();
        let s = Structure::empty(names(&["X"]), NodeType::Ckde).unwrap();
        let m = Spbn::from_parts(s, vec![Cpd::Ckde(cpd)]).unwrap();
        assert_relative_eq!(m.logpdf(&data).unwrap(), 0.398_942_280_4_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn rows_sum_to_total_and_shuffle_invariant() {
        let data = linear_pair(40, 3);
        let dag = Dag::from_arcs(names(&["A", "B"]), &[("A", "B")]).unwrap();
        let s = Structure::new(dag, vec![NodeType::Lg, NodeType::Ckde]).unwrap();
        let m = Spbn::fit(&data, s, &FitConfig::default()).unwrap();
        let rows = m.logpdf_rows(&data).unwrap();
        let total = m.logpdf(&data).unwrap();
        assert_relative_eq!(rows.iter().sum::<f64>(), total, epsilon = 1e-12);
        let rev: Vec<usize> = (0..40).rev().collect();
        assert_relative_eq!(m.logpdf(&data.take_rows(&rev).unwrap()).unwrap(), total, epsilon = 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_and_matches_lg_moments() {
        let cpd = |name: &str| {
            Cpd::Lg(crate::cpd::LinearGaussianCpd {
                child: name.into(),
                parents: vec![],
                beta0: 3.0,
                betas: vec![],
                sigma: 2.0,
            })
        };
        let s = Structure::empty(names(&["A", "B"]), NodeType::Lg).unwrap();
        let m = Spbn::from_parts(s, vec![cpd("A"), cpd("B")]).unwrap();
        let a = m.sample(4000, 11).unwrap();
        assert_eq!(a, m.sample(4000, 11).unwrap());
        for j in 0..2 {
            let mean = a.column(j).iter().sum::<f64>() / 4000.0;
            assert!((mean - 3.0).abs() < 4.0 * 2.0 / 4000f64.sqrt());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let data = linear_pair(30, 4);
        let dag = Dag::from_arcs(names(&["A", "B"]), &[("A", "B")]).unwrap();
        let s = Structure::new(dag, vec![NodeType::Lg, NodeType::Ckde]).unwrap();
        let m = Spbn::fit(&data, s, &FitConfig::default()).unwrap();
        let json = m.to_json();
        let back = Spbn::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), json);
        assert_eq!(back.logpdf(&data).unwrap().to_bits(), m.logpdf(&data).unwrap().to_bits());
    }

    #[test]
    fn structure_file_format() {
        let s = Structure::from_json(r#"{"nodes":["a","b"],"arcs":[["a","b"]],"types":{"b":"CKDE"}}"#).unwrap();
        assert_eq!(s.types, vec![NodeType::Lg, NodeType::Ckde]);
        assert!(Structure::from_json(r#"{"nodes":["a"],"arcs":[],"types":{"z":"LG"}}"#).is_err());
    }
}
