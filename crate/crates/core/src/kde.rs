//! Multivariate Gaussian kernel density estimation.
//!
//! A [`KdeModel`] keeps its training rows pre-whitened by the bandwidth's
//! Cholesky factor (`z = L⁻¹x`), so every kernel evaluation reduces to a
//! squared Euclidean distance. Densities are produced in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `N × d` matrix of observations with named columns (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    columns: Vec<String>,
    values: Vec<f64>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::from_rows(r.columns, &r.rows)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            rows: d.rows().map(|r| r.to_vec()).collect(),
            columns: d.columns,
        }
    }
}

impl Dataset {
    pub fn new(columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::InvalidDataset("no columns".into()));
        }
        if values.len() % d != 0 {
            return Err(Error::InvalidDataset(format!(
                "{} values do not fill rows of width {d}",
                values.len()
            )));
        }
        let n = values.len() / d;
        if n == 0 {
            return Err(Error::InvalidDataset("no rows".into()));
        }
        for (i, name) in columns.iter().enumerate() {
            if columns[..i].contains(name) {
                return Err(Error::InvalidDataset(format!("duplicate column `{name}`")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column `{}`",
                pos / d,
                columns[pos % d]
            )));
        }
        Ok(Self { columns, values, n })
    }

    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = columns.len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidDataset(format!("row {i} has {} values, expected {d}", rows[i].len())));
        }
        Self::new(columns, rows.concat())
    }

    /// Single column dataset, handy in tests and for 1-D selectors.
    pub fn univariate(name: &str, values: &[f64]) -> Result<Self> {
        Self::new(vec![name.to_string()], values.to_vec())
    }

    pub fn from_columns(columns: Vec<String>, cols: &[Vec<f64>]) -> Result<Self> {
        let d = cols.len();
        let n = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidDataset("columns differ in length".into()));
        }
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            values.extend(cols.iter().map(|c| c[i]));
        }
        Self::new(columns, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.d())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Projection onto the named columns, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|s| self.column_index(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_indices(&idx))
    }

    pub fn select_indices(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.n * idx.len());
        for r in self.rows() {
            values.extend(idx.iter().map(|&j| r[j]));
        }
        Self {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            values,
            n: self.n,
        }
    }

    /// Subset of rows, in the given order (indices may repeat).
    pub fn take_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.d());
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(self.columns.clone(), values)
    }

    pub fn covariance(&self) -> Vec<f64> {
        crate::linalg::sample_covariance(&self.values, self.n, self.d())
    }
}

/// `log φ_H(δ)`, the log of a zero-mean Gaussian density with covariance `H`.
pub fn gaussian_kernel_logpdf(h: &SpdMatrix, delta: &[f64]) -> Result<f64> {
    if delta.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: delta.len(),
        });
    }
    let d = h.dim() as f64;
    Ok(-0.5 * (d * LN_2PI + h.log_det() + h.cholesky().mahalanobis_sq(delta)))
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Gaussian KDE: training sample plus bandwidth matrix.
#[derive(Debug, Clone)]
pub struct KdeModel {
    train: Dataset,
    bandwidth: SpdMatrix,
    whitened: Vec<f64>,
    log_norm: f64,
}

impl KdeModel {
    pub fn new(train: Dataset, bandwidth: SpdMatrix) -> Result<Self> {
        let d = train.d();
        if bandwidth.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bandwidth.dim(),
            });
        }
        let chol = bandwidth.cholesky();
        let mut whitened = vec![0.0; train.values().len()];
        for (x, z) in train.rows().zip(whitened.chunks_exact_mut(d)) {
            chol.solve_lower_into(x, z);
        }
        let log_norm = -0.5 * (d as f64 * LN_2PI + bandwidth.log_det());
        Ok(Self {
            train,
            bandwidth,
            whitened,
            log_norm,
        })
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn bandwidth(&self) -> &SpdMatrix {
        &self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.train.n()
    }

    pub fn d(&self) -> usize {
        self.train.d()
    }

    /// Unnormalized log kernels `-½‖z − zᵢ‖²` against every training row except `skip`.
    pub(crate) fn log_kernels_at(&self, x: &[f64], skip: Option<usize>, buf: &mut Vec<f64>) {
        let d = self.d();
        let mut z = vec![0.0; d];
        self.bandwidth.cholesky().solve_lower_into(x, &mut z);
        buf.clear();
        for (i, zi) in self.whitened.chunks_exact(d).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let r2: f64 = zi.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            buf.push(-0.5 * r2);
        }
    }

    /// Log density at a single point.
    pub fn logpdf_point(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        let mut buf = Vec::with_capacity(self.n());
        self.log_kernels_at(x, None, &mut buf);
        Ok(self.log_norm + log_sum_exp(&buf) - (self.n() as f64).ln())
    }

    /// Log density at every row of `points`.
    pub fn logpdf(&self, points: &Dataset) -> Result<Vec<f64>> {
        if points.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: points.d(),
            });
        }
        let ln_n = (self.n() as f64).ln();
        let mut buf = Vec::with_capacity(self.n());
        Ok(points
            .rows()
            .map(|x| {
                self.log_kernels_at(x, None, &mut buf);
                self.log_norm + log_sum_exp(&buf) - ln_n
            })
            .collect())
    }

    /// Leave-one-out log density at every training point.
    pub fn loo_logpdf(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let ln_n1 = ((n - 1) as f64).ln();
        let mut buf = Vec::with_capacity(n);
        Ok((0..n)
            .map(|i| {
                self.log_kernels_at(self.train.row(i), Some(i), &mut buf);
                self.log_norm + log_sum_exp(&buf) - ln_n1
            })
            .collect())
    }

    /// Draws `n` points from the KDE mixture.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d();
        let mut values = Vec::with_capacity(n * d);
        let mut eps = vec![0.0; d];
        for _ in 0..n {
            let i = rng.gen_range(0..self.n());
            eps.iter_mut()
                .for_each(|e| *e = rng.sample::<f64, _>(StandardNormal));
            let noise = self.bandwidth.cholesky().mul_lower(&eps);
            values.extend(self.train.row(i).iter().zip(&noise).map(|(x, e)| x + e));
        }
        Dataset::new(self.train.columns().to_vec(), values)
    }
}
