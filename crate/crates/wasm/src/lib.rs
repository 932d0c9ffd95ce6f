//! WebAssembly bindings for the browser demo.
//!
//! Every export takes plain numbers and strings and returns a JSON string.
//! The logic lives in the `*_json` functions so it can be tested natively.

use serde::Serialize;
use spbn::selectors::{nr_bandwidth, select_bandwidth, ucv_objective};
use spbn::{CkdeCpd, Dataset, GroundTruthNet, KdeModel, SelectorConfig, SelectorKind, SpdMatrix};
use wasm_bindgen::prelude::*;

const GRID_POINTS: usize = 240;
const MAX_N: usize = 5000;

type Res<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json<T: Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(err)
}

fn check_n(n: usize) -> Res<()> {
    if (10..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(format!("sample size must be between 10 and {MAX_N}, got {n}"))
    }
}

fn sample(net: &str, n: usize, seed: u64) -> Res<(GroundTruthNet, Dataset)> {
    check_n(n)?;
    let net = GroundTruthNet::builtin(net).map_err(err)?;
    let data = net.sample(n, seed).map_err(err)?;
    Ok((net, data))
}

fn grid_over(values: &[f64], pad: f64) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..GRID_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

#[derive(Serialize)]
struct NodeInfo {
    name: String,
    parents: Vec<String>,
    node_type: String,
    /// 5%, 50% and 95% quantiles of a reference sample.
    range: [f64; 3],
}

/// Nodes, parents, declared types and reference ranges of a built-in network.
pub fn describe_json(net: &str) -> Res<String> {
    let (net, data) = sample(net, 2000, 0)?;
    let dag = net.dag();
    let types = &net.structure().types;
    let nodes: Vec<NodeInfo> = (0..dag.n())
        .map(|v| {
            let col = data.column(v);
            NodeInfo {
                name: dag.name(v).to_string(),
                parents: dag.parent_names(v),
                node_type: types[v].name().to_string(),
                range: [quantile(&col, 0.05), quantile(&col, 0.5), quantile(&col, 0.95)],
            }
        })
        .collect();
    to_json(&nodes)
}

#[derive(Serialize)]
struct Curve {
    selector: String,
    bandwidth: f64,
    density: Vec<f64>,
}

#[derive(Serialize)]
struct Marginals {
    grid: Vec<f64>,
    sample: Vec<f64>,
    /// Exact density for root nodes, otherwise absent.
    truth: Option<Vec<f64>>,
    curves: Vec<Curve>,
}

fn density_on(values: &[f64], h: &SpdMatrix, grid: &[f64]) -> Res<Vec<f64>> {
    let model = KdeModel::new(Dataset::univariate("x", values).map_err(err)?, h.clone()).map_err(err)?;
    let points = Dataset::univariate("x", grid).map_err(err)?;
    Ok(model.logpdf(&points).map_err(err)?.into_iter().map(f64::exp).collect())
}

/// One-dimensional KDEs of a node's sample under all four selectors.
pub fn compare_selectors_json(net: &str, node: &str, n: usize, seed: u64) -> Res<String> {
    let (net, data) = sample(net, n, seed)?;
    let v = net.dag().index_of(node).map_err(err)?;
    let values = data.column(v);
    let grid = grid_over(&values, 3.0 * sd(&values) * (n as f64).powf(-0.2));
    let column = Dataset::univariate(node, &values).map_err(err)?;
    let config = SelectorConfig::default();
    let mut curves = Vec::new();
    for kind in [SelectorKind::Nr, SelectorKind::Ucv, SelectorKind::Scv, SelectorKind::Pi] {
        let h = select_bandwidth(&column, kind, &config).map_err(err)?.bandwidth;
        curves.push(Curve {
            selector: kind.name().to_string(),
            bandwidth: h.get(0, 0),
            density: density_on(&values, &h, &grid)?,
        });
    }
    let truth = if net.dag().parents(v).is_empty() {
        let f = net.factor(v);
        Some(grid.iter().map(|&x| f.logpdf(x, &[]).map(f64::exp)).collect::<spbn::Result<_>>().map_err(err)?)
    } else {
        None
    };
    to_json(&Marginals {
        grid,
        sample: values,
        truth,
        curves,
    })
}

#[derive(Serialize)]
struct Profile {
    bandwidth: Vec<f64>,
    ucv: Vec<f64>,
    nr: f64,
    selected: f64,
    selected_ucv: f64,
}

/// The UCV criterion of a node's sample over a log-spaced bandwidth grid.
pub fn ucv_profile_json(net: &str, node: &str, n: usize, seed: u64) -> Res<String> {
    let (net, data) = sample(net, n, seed)?;
    let v = net.dag().index_of(node).map_err(err)?;
    let column = Dataset::univariate(node, &data.column(v)).map_err(err)?;
    let nr = nr_bandwidth(&column, 0).map_err(err)?.get(0, 0);
    let picked = select_bandwidth(&column, SelectorKind::Ucv, &SelectorConfig::default()).map_err(err)?;
    let (lo, hi) = (nr / 200.0, nr * 5.0);
    let m = 120;
    let mut bandwidth = Vec::with_capacity(m);
    let mut ucv = Vec::with_capacity(m);
    for k in 0..m {
        let h = lo * (hi / lo).powf(k as f64 / (m - 1) as f64);
        let value = ucv_objective(&column, &SpdMatrix::diagonal(&[h]).map_err(err)?).map_err(err)?;
        bandwidth.push(h);
        ucv.push(value);
    }
    to_json(&Profile {
        bandwidth,
        ucv,
        nr,
        selected: picked.bandwidth.get(0, 0),
        selected_ucv: picked.objective,
    })
}

#[derive(Serialize)]
struct Slice {
    parents: Vec<String>,
    grid: Vec<f64>,
    estimate: Vec<f64>,
    truth: Vec<f64>,
    bandwidth: Vec<Vec<f64>>,
}

/// CKDE conditional density of `node` given its true parents fixed at
/// `parent_values`, next to the exact conditional.
pub fn conditional_slice_json(
    net: &str,
    node: &str,
    n: usize,
    seed: u64,
    selector: &str,
    parent_values: &[f64],
) -> Res<String> {
    let (net, data) = sample(net, n, seed)?;
    let kind: SelectorKind = selector.parse().map_err(err)?;
    let dag = net.dag();
    let v = dag.index_of(node).map_err(err)?;
    let parents = dag.parent_names(v);
    if parents.len() != parent_values.len() {
        return Err(format!(
            "{node} has {} parents, got {} values",
            parents.len(),
            parent_values.len()
        ));
    }
    let cpd = CkdeCpd::fit(&data, node, &parents, kind, &SelectorConfig::default()).map_err(err)?;
    let values = data.column(v);
    let grid = grid_over(&values, sd(&values) * 0.5);
    let cols: Vec<String> = std::iter::once(node.to_string()).chain(parents.iter().cloned()).collect();
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .map(|&x| std::iter::once(x).chain(parent_values.iter().copied()).collect())
        .collect();
    let query = Dataset::from_rows(cols, &rows).map_err(err)?;
    let estimate = cpd.logpdf(&query).map_err(err)?.into_iter().map(f64::exp).collect();
    let factor = net.factor(v);
    let truth = grid
        .iter()
        .map(|&x| factor.logpdf(x, parent_values).map(f64::exp))
        .collect::<spbn::Result<_>>()
        .map_err(err)?;
    let h = cpd.bandwidth();
    let bandwidth = (0..h.dim()).map(|i| (0..h.dim()).map(|j| h.get(i, j)).collect()).collect();
    to_json(&Slice {
        parents,
        grid,
        estimate,
        truth,
        bandwidth,
    })
}

fn js(r: Res<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn describe(net: &str) -> Result<String, JsError> {
    js(describe_json(net))
}

#[wasm_bindgen]
pub fn compare_selectors(net: &str, node: &str, n: usize, seed: u32) -> Result<String, JsError> {
    js(compare_selectors_json(net, node, n, seed.into()))
}

#[wasm_bindgen]
pub fn ucv_profile(net: &str, node: &str, n: usize, seed: u32) -> Result<String, JsError> {
    js(ucv_profile_json(net, node, n, seed.into()))
}

#[wasm_bindgen]
pub fn conditional_slice(
    net: &str,
    node: &str,
    n: usize,
    seed: u32,
    selector: &str,
    parent_values: Vec<f64>,
) -> Result<String, JsError> {
    js(conditional_slice_json(net, node, n, seed.into(), selector, &parent_values))
}
