//! Directed acyclic graphs, their CPDAGs, and the structural Hamming distance.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DAG over named nodes. Parent lists are kept sorted by node index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagRepr", into = "DagRepr")]
pub struct Dag {
    nodes: Vec<String>,
    parents: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DagRepr {
    nodes: Vec<String>,
    arcs: Vec<[String; 2]>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = Error;
    fn try_from(r: DagRepr) -> Result<Self> {
        let arcs: Vec<(String, String)> = r.arcs.into_iter().map(|[u, v]| (u, v)).collect();
        Dag::from_arcs(r.nodes, &arcs)
    }
}

impl From<Dag> for DagRepr {
    fn from(d: Dag) -> Self {
        DagRepr {
            arcs: d
                .arc_names()
                .into_iter()
                .map(|(u, v)| [u.to_string(), v.to_string()])
                .collect(),
            nodes: d.nodes,
        }
    }
}

impl Dag {
    /// Graph with no arcs.
    pub fn empty(nodes: Vec<String>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Graph("no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::Graph(format!("duplicate node `{n}`")));
            }
        }
        let parents = vec![Vec::new(); nodes.len()];
        Ok(Self { nodes, parents })
    }

    pub fn from_arcs<S: AsRef<str>>(nodes: Vec<String>, arcs: &[(S, S)]) -> Result<Self> {
        let mut dag = Self::empty(nodes)?;
        for (u, v) in arcs {
            let (u, v) = (dag.index_of(u.as_ref())?, dag.index_of(v.as_ref())?);
            dag.add_arc(u, v)?;
        }
        Ok(dag)
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn name(&self, v: usize) -> &str {
        &self.nodes[v]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn parent_names(&self, v: usize) -> Vec<String> {
        self.parents[v].iter().map(|&p| self.nodes[p].clone()).collect()
    }

    pub fn children(&self, v: usize) -> Vec<usize> {
        (0..self.n()).filter(|&c| self.has_arc(v, c)).collect()
    }

    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        self.parents[v].binary_search(&u).is_ok()
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.has_arc(u, v) || self.has_arc(v, u)
    }

    /// Arcs `(parent, child)` in lexicographic index order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let mut arcs: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(v, ps)| ps.iter().map(move |&u| (u, v)))
            .collect();
        arcs.sort_unstable();
        arcs
    }

    pub fn arc_names(&self) -> Vec<(&str, &str)> {
        self.arcs()
            .into_iter()
            .map(|(u, v)| (self.name(u), self.name(v)))
            .collect()
    }

    pub fn arc_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Whether a directed path `from ⇝ to` exists (a node reaches itself).
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; self.n()];
        while let Some(x) = stack.pop() {
            if x == to {
                return true;
            }
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend((0..self.n()).filter(|&c| !seen[c] && self.has_arc(x, c)));
        }
        false
    }

    /// Whether adding `u → v` would close a cycle.
    pub fn creates_cycle(&self, u: usize, v: usize) -> bool {
        self.has_path(v, u)
    }

    fn check_index(&self, v: usize) -> Result<()> {
        if v < self.n() {
            Ok(())
        } else {
            Err(Error::Graph(format!("node index {v} out of range")))
        }
    }

    pub fn add_arc(&mut self, u: usize, v: usize) -> Result<()> {
        self.check_index(u)?;
        self.check_index(v)?;
        if u == v {
            return Err(Error::Graph(format!("self-loop on `{}`", self.nodes[u])));
        }
        if self.has_arc(u, v) {
            return Err(Error::Graph(format!(
                "duplicate arc {} -> {}",
                self.nodes[u], self.nodes[v]
            )));
        }
        if self.creates_cycle(u, v) {
            return Err(Error::Graph(format!(
                "arc {} -> {} creates a cycle",
                self.nodes[u], self.nodes[v]
            )));
        }
        let ps = &mut self.parents[v];
        let at = ps.partition_point(|&p| p < u);
        ps.insert(at, u);
        Ok(())
    }

    pub fn remove_arc(&mut self, u: usize, v: usize) -> Result<()> {
        self.check_index(u)?;
        self.check_index(v)?;
        match self.parents[v].binary_search(&u) {
            Ok(at) => {
                self.parents[v].remove(at);
                Ok(())
            }
            Err(_) => Err(Error::Graph(format!(
                "no arc {} -> {}",
                self.nodes[u], self.nodes[v]
            ))),
        }
    }

    /// Replaces `u → v` with `v → u`; fails (leaving the graph intact) on a cycle.
    pub fn flip_arc(&mut self, u: usize, v: usize) -> Result<()> {
        self.remove_arc(u, v)?;
        if let Err(e) = self.add_arc(v, u) {
            self.add_arc(u, v).expect("restoring a removed arc");
            return Err(e);
        }
        Ok(())
    }

    /// Kahn's algorithm, always taking the lowest ready index.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.n();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for c in self.children(v) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        order
    }
}

/// Completed partially directed graph: compelled arcs plus undirected edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpdag {
    nodes: Vec<String>,
    directed: BTreeSet<(usize, usize)>,
    /// Stored as `(min, max)`.
    undirected: BTreeSet<(usize, usize)>,
}

/// State of an unordered node pair in a CPDAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeState {
    Absent,
    Forward,
    Backward,
    Undirected,
}

impl Cpdag {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn directed(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    pub fn undirected(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    /// Edge state of the pair `u < v`, seen from `u`.
    pub fn state(&self, u: usize, v: usize) -> EdgeState {
        let key = (u.min(v), u.max(v));
        if self.undirected.contains(&key) {
            EdgeState::Undirected
        } else if self.directed.contains(&(u, v)) {
            EdgeState::Forward
        } else if self.directed.contains(&(v, u)) {
            EdgeState::Backward
        } else {
            EdgeState::Absent
        }
    }
}

/// CPDAG of the Markov equivalence class of `dag`: arcs in v-structures are
/// compelled, then Meek's rules 1–3 propagate orientations to a fixpoint.
pub fn cpdag_of(dag: &Dag) -> Cpdag {
    let n = dag.n();
    let mut directed = BTreeSet::new();
    let mut undirected = BTreeSet::new();
    for (u, v) in dag.arcs() {
        undirected.insert((u.min(v), u.max(v)));
    }
    for c in 0..n {
        let ps = dag.parents(c);
        for (k, &a) in ps.iter().enumerate() {
            for &b in &ps[k + 1..] {
                if !dag.adjacent(a, b) {
                    for p in [a, b] {
                        undirected.remove(&(p.min(c), p.max(c)));
                        directed.insert((p, c));
                    }
                }
            }
        }
    }

    let adjacent = |d: &BTreeSet<(usize, usize)>, u: &BTreeSet<(usize, usize)>, a: usize, b: usize| {
        d.contains(&(a, b)) || d.contains(&(b, a)) || u.contains(&(a.min(b), a.max(b)))
    };
    loop {
        let mut orient = None;
        'search: for &(x, y) in &undirected {
            for (a, b) in [(x, y), (y, x)] {
                // R1: c → a -- b with c, b non-adjacent ⇒ a → b
                let r1 = (0..n).any(|c| directed.contains(&(c, a)) && c != b && !adjacent(&directed, &undirected, c, b));
                // R2: a → c → b ⇒ a → b
                let r2 = (0..n).any(|c| directed.contains(&(a, c)) && directed.contains(&(c, b)));
                // R3: a -- c → b, a -- d → b, c and d non-adjacent ⇒ a → b
                let mids: Vec<usize> = (0..n)
                    .filter(|&c| undirected.contains(&(a.min(c), a.max(c))) && directed.contains(&(c, b)))
                    .collect();
                let r3 = mids.iter().enumerate().any(|(i, &c)| {
                    mids[i + 1..]
                        .iter()
                        .any(|&d| !adjacent(&directed, &undirected, c, d))
                });
                if r1 || r2 || r3 {
                    orient = Some((a, b));
                    break 'search;
                }
            }
        }
        match orient {
            Some((a, b)) => {
                undirected.remove(&(a.min(b), a.max(b)));
                directed.insert((a, b));
            }
            None => break,
        }
    }
    Cpdag {
        nodes: dag.nodes().to_vec(),
        directed,
        undirected,
    }
}

/// Structural Hamming distance between the CPDAGs of `a` and `b`: one per
/// node pair whose edge state (absent, either direction, undirected) differs.
pub fn shd(a: &Dag, b: &Dag) -> Result<usize> {
    let mut same = a.n() == b.n();
    let map: HashMap<&str, usize> = b
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let to_b: Vec<usize> = a
        .nodes()
        .iter()
        .filter_map(|n| map.get(n.as_str()).copied())
        .collect();
    same &= to_b.len() == a.n();
    if !same {
        return Err(Error::NodeSetMismatch);
    }
    let (ca, cb) = (cpdag_of(a), cpdag_of(b));
    let mut count = 0;
    for u in 0..a.n() {
        for v in u + 1..a.n() {
            if ca.state(u, v) != cb.state(to_b[u], to_b[v]) {
                count += 1;
            }
        }
    }
    Ok(count)
}
