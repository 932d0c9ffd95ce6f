//! Permutation test for a difference in medians and pairwise multiple
//! comparison corrections (Bergmann-Hommel, Holm).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 4999;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const MAX_BERGMANN_HOMMEL_GROUPS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub p_value: f64,
    pub observed_stat: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let (_, hi, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..n / 2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

fn median_gap(pooled: &[f64], na: usize, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend_from_slice(&pooled[..na]);
    let ma = median(buf);
    buf.clear();
    buf.extend_from_slice(&pooled[na..]);
    let mb = median(buf);
    (ma - mb).abs()
}

/// Two-sided permutation test of |median(a) − median(b)|.
///
/// Permutation `r` draws from its own ChaCha stream, so the result does not
/// depend on how the permutations are scheduled.
pub fn permutation_median_test(
    a: &[f64],
    b: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<PermTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if n_perm < 100 {
        return Err(Error::InsufficientData(format!(
            "need at least 100 permutations, got {n_perm}"
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("permutation test sample"));
    }
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut buf = Vec::with_capacity(pooled.len());
    let observed = median_gap(&pooled, a.len(), &mut buf);
    // Ties in the statistic count as extreme despite rounding.
    let threshold = observed * (1.0 - 1e-12);
    let original = pooled.clone();
    let mut extreme = 0usize;
    for r in 0..n_perm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        pooled.copy_from_slice(&original);
        pooled.shuffle(&mut rng);
        if median_gap(&pooled, a.len(), &mut buf) >= threshold {
            extreme += 1;
        }
    }
    Ok(PermTestResult {
        p_value: (1 + extreme) as f64 / (1 + n_perm) as f64,
        observed_stat: observed,
        n_permutations: n_perm,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    BergmannHommel,
    Holm,
}

impl Correction {
    pub fn name(self) -> &'static str {
        match self {
            Correction::BergmannHommel => "bergmann-hommel",
            Correction::Holm => "holm",
        }
    }
}

/// Raw and adjusted p-values for every unordered pair of methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub methods: Vec<String>,
    pub correction: Correction,
    pub alpha: f64,
    /// Symmetric, with 1 on the diagonal.
    pub raw: Vec<Vec<f64>>,
    pub adjusted: Vec<Vec<f64>>,
    pub reject: Vec<Vec<bool>>,
}

fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect()
}

fn check_raw(methods: &[String], raw: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = methods.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 methods, got {k}"
        )));
    }
    if raw.len() != k || raw.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: raw.len(),
        });
    }
    let mut out = Vec::new();
    for (i, j) in pairs(k) {
        let p = raw[i][j];
        if !(0.0..=1.0).contains(&p) || (raw[j][i] - p).abs() > 1e-12 {
            return Err(Error::InsufficientData(format!(
                "p-value for ({}, {}) must be symmetric and in [0, 1]",
                methods[i], methods[j]
            )));
        }
        out.push(p);
    }
    Ok(out)
}

fn build(
    methods: &[String],
    correction: Correction,
    alpha: f64,
    raw: &[f64],
    adjusted: &[f64],
) -> PairwiseMatrix {
    let k = methods.len();
    let mut r = vec![vec![1.0; k]; k];
    let mut a = vec![vec![1.0; k]; k];
    let mut rej = vec![vec![false; k]; k];
    for (h, (i, j)) in pairs(k).into_iter().enumerate() {
        r[i][j] = raw[h];
        r[j][i] = raw[h];
        a[i][j] = adjusted[h];
        a[j][i] = adjusted[h];
        rej[i][j] = adjusted[h] <= alpha;
        rej[j][i] = rej[i][j];
    }
    PairwiseMatrix {
        methods: methods.to_vec(),
        correction,
        alpha,
        raw: r,
        adjusted: a,
        reject: rej,
    }
}

/// All set partitions of `0..k`, as a group label per element.
fn partitions(k: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, groups: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for g in 0..=groups {
            prefix.push(g);
            grow(prefix, groups.max(g + 1), k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::with_capacity(k), 0, k, &mut out);
    out
}

/// Exhaustive sets of pairwise hypotheses: the pairs that share a group in
/// some partition of the methods. Each set is a list of hypothesis indices.
fn exhaustive_sets(k: usize) -> Vec<Vec<usize>> {
    let all = pairs(k);
    partitions(k)
        .into_iter()
        .map(|labels| {
            all.iter()
                .enumerate()
                .filter(|(_, &(i, j))| labels[i] == labels[j])
                .map(|(h, _)| h)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Adjusted p-value of each hypothesis: the largest `|I| · min p(I)` over the
/// exhaustive sets `I` containing it.
pub fn bergmann_hommel_adjust(
    methods: &[String],
    raw: &[Vec<f64>],
    alpha: f64,
) -> Result<PairwiseMatrix> {
    let p = check_raw(methods, raw)?;
    let k = methods.len();
    if k > MAX_BERGMANN_HOMMEL_GROUPS {
        return Err(Error::TooManyGroups(k));
    }
    let mut adjusted = vec![0.0f64; p.len()];
    for set in exhaustive_sets(k) {
        let min_p = set.iter().map(|&h| p[h]).fold(f64::INFINITY, f64::min);
        let bound = (set.len() as f64 * min_p).min(1.0);
        for &h in &set {
            adjusted[h] = adjusted[h].max(bound);
        }
    }
    Ok(build(methods, Correction::BergmannHommel, alpha, &p, &adjusted))
}

/// Holm step-down adjustment over all pairs.
pub fn holm_adjust(methods: &[String], raw: &[Vec<f64>], alpha: f64) -> Result<PairwiseMatrix> {
    let p = check_raw(methods, raw)?;
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &h) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[h]).min(1.0));
        adjusted[h] = running;
    }
    Ok(build(methods, Correction::Holm, alpha, &p, &adjusted))
}

pub fn adjust(
    methods: &[String],
    raw: &[Vec<f64>],
    alpha: f64,
    correction: Correction,
) -> Result<PairwiseMatrix> {
    match correction {
        Correction::BergmannHommel => bergmann_hommel_adjust(methods, raw, alpha),
        Correction::Holm => holm_adjust(methods, raw, alpha),
    }
}

/// Permutation tests for every pair of samples followed by a correction.
/// Pair `h` (in row-major order over `i < j`) uses seed `seed + h`.
pub fn pairwise_median_tests(
    samples: &[(String, Vec<f64>)],
    n_perm: usize,
    seed: u64,
    alpha: f64,
    correction: Correction,
) -> Result<PairwiseMatrix> {
    let k = samples.len();
    let methods: Vec<String> = samples.iter().map(|s| s.0.clone()).collect();
    let mut raw = vec![vec![1.0; k]; k];
    for (h, (i, j)) in pairs(k).into_iter().enumerate() {
        let t = permutation_median_test(&samples[i].1, &samples[j].1, n_perm, seed + h as u64)?;
        raw[i][j] = t.p_value;
        raw[j][i] = t.p_value;
    }
    adjust(&methods, &raw, alpha, correction)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl PairwiseMatrix {
    /// One row per unordered pair.
    pub fn to_pairs_csv(&self) -> String {
        let mut out = String::from("method_a,method_b,raw_p,adjusted_p,reject\n");
        for (i, j) in pairs(self.methods.len()) {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{}\n",
                csv_field(&self.methods[i]),
                csv_field(&self.methods[j]),
                self.raw[i][j],
                self.adjusted[i][j],
                self.reject[i][j]
            ));
        }
        out
    }

    /// Square matrix of adjusted p-values with method names as header.
    pub fn to_matrix_csv(&self) -> String {
        let mut out = String::from("method");
        for m in &self.methods {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push('\n');
        for (i, m) in self.methods.iter().enumerate() {
            out.push_str(&csv_field(m));
            for j in 0..self.methods.len() {
                out.push_str(&format!(",{:.16e}", self.adjusted[i][j]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }
}
