//! Results tables and the statistics report built from them: per-cell
//! medians and pairwise permutation tests between methods.

use std::path::Path;

use serde::Serialize;
use spbn::stats::{median, pairwise_median_tests, Correction, PairwiseMatrix};

use crate::csvio::{fmt_f64, write_text};
use crate::error::{CliError, CliResult};
use crate::experiment::{derive_seed, Row};

const FIXED_COLUMNS: [&str; 4] = ["selector", "n", "replicate", "status"];

/// Rows of `selector,n,replicate,status` followed by one column per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metrics: Vec<String>,
    pub rows: Vec<Row>,
}

fn fmt_metric(name: &str, v: f64) -> String {
    if name == "shd" && v.is_finite() {
        format!("{}", v as u64)
    } else {
        fmt_f64(v)
    }
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = FIXED_COLUMNS.join(",");
        for m in &self.metrics {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}", r.method, r.n, r.replicate, r.status));
            for (name, &v) in self.metrics.iter().zip(&r.metrics) {
                out.push(',');
                out.push_str(&fmt_metric(name, v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, source: &str) -> CliResult<Self> {
        let err = |m: String| CliError::Data(format!("{source}: {m}"));
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() <= FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(err(format!(
                "header must start with {} and name at least one metric",
                FIXED_COLUMNS.join(",")
            )));
        }
        let metrics = header[FIXED_COLUMNS.len()..].to_vec();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| err(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or_default();
            let int = |i: usize| {
                field(i)
                    .parse::<usize>()
                    .map_err(|_| err(format!("row {line}, column `{}`: not an integer", header[i])))
            };
            let mut values = Vec::with_capacity(metrics.len());
            for i in FIXED_COLUMNS.len()..header.len() {
                let v = field(i)
                    .parse::<f64>()
                    .map_err(|_| err(format!("row {line}, column `{}`: not a number", header[i])))?;
                values.push(v);
            }
            rows.push(Row {
                method: field(0).to_string(),
                n: int(1)?,
                replicate: int(2)?,
                status: field(3).to_string(),
                metrics: values,
                seconds: f64::NAN,
            });
        }
        Ok(ResultTable { metrics, rows })
    }

    /// Sizes and methods in sorted order.
    fn cells(&self) -> (Vec<usize>, Vec<String>) {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut methods: Vec<String> = self.rows.iter().map(|r| r.method.clone()).collect();
        methods.sort();
        methods.dedup();
        (sizes, methods)
    }

    /// Successful values of `metric` for one method and size.
    pub fn values(&self, metric: usize, method: &str, n: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.status == "ok" && r.method == method && r.n == n)
            .map(|r| r.metrics[metric])
            .collect()
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub metric: String,
    pub n: usize,
    pub method: String,
    pub count: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: String,
    pub n: usize,
    pub seed: u64,
    pub matrix: PairwiseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub n_permutations: usize,
    pub seed: u64,
    pub alpha: f64,
    pub correction: Correction,
    pub medians: Vec<MedianRow>,
    /// One entry per (metric, size) with at least two methods to compare.
    pub comparisons: Vec<Comparison>,
}

impl Report {
    pub fn build(
        table: &ResultTable,
        n_permutations: usize,
        seed: u64,
        alpha: f64,
        correction: Correction,
    ) -> CliResult<Self> {
        let (sizes, methods) = table.cells();
        let mut medians = Vec::new();
        let mut comparisons = Vec::new();
        for (k, metric) in table.metrics.iter().enumerate() {
            for &n in &sizes {
                let mut samples = Vec::new();
                for m in &methods {
                    let mut v = table.values(k, m, n);
                    if v.is_empty() {
                        continue;
                    }
                    medians.push(MedianRow {
                        metric: metric.clone(),
                        n,
                        method: m.clone(),
                        count: v.len(),
                        median: median(&mut v.clone()),
                    });
                    if v.len() >= 2 {
                        v.sort_by(f64::total_cmp);
                        samples.push((m.clone(), v));
                    }
                }
                if samples.len() < 2 {
                    continue;
                }
                let cell_seed = derive_seed(seed, &[k as u64, n as u64]);
                let matrix = pairwise_median_tests(&samples, n_permutations, cell_seed, alpha, correction)
                    .map_err(|e| match e {
                        spbn::Error::TooManyGroups(k) => CliError::Usage(format!(
                            "{k} methods exceed the exhaustive Bergmann-Hommel limit; use correction `holm`"
                        )),
                        other => other.into(),
                    })?;
                comparisons.push(Comparison {
                    metric: metric.clone(),
                    n,
                    seed: cell_seed,
                    matrix,
                });
            }
        }
        Ok(Report {
            n_permutations,
            seed,
            alpha,
            correction,
            medians,
            comparisons,
        })
    }

    pub fn medians_csv(&self) -> String {
        let mut out = String::from("metric,n,method,count,median\n");
        for m in &self.medians {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.metric,
                m.n,
                m.method,
                m.count,
                fmt_f64(m.median)
            ));
        }
        out
    }

    /// Every pairwise test, prefixed by its metric and size.
    pub fn pvalues_csv(&self) -> String {
        let mut out = String::from("metric,n,method_a,method_b,raw_p,adjusted_p,reject\n");
        for c in &self.comparisons {
            for line in c.matrix.to_pairs_csv().lines().skip(1) {
                out.push_str(&format!("{},{},{line}\n", c.metric, c.n));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The median of `metric` for one method and size, if present.
    pub fn median_of(&self, metric: &str, method: &str, n: usize) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.metric == metric && m.method == method && m.n == n)
            .map(|m| m.median)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_text(&dir.join("report.json"), &self.to_json())?;
        write_text(&dir.join("pvalues.csv"), &self.pvalues_csv())?;
        write_text(&dir.join("medians.csv"), &self.medians_csv())
    }
}
