//! Small dense symmetric-matrix toolkit for bandwidth matrices.
//!
//! Matrices here are tiny (one row/column per variable in a CPD), so
//! everything is stored row-major in a flat `Vec<f64>` and factorized eagerly.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry above which a matrix is rejected instead of symmetrized.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-9;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major lower triangle (upper entries are zero).
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// `log |M|`, i.e. `2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Solves `L z = b` by forward substitution, writing `z` into `out`.
    pub fn solve_lower_into(&self, b: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&out[..i]).map(|(l, z)| l * z).sum();
            out[i] = (b[i] - s) / self.lower[i * d + i];
        }
    }

    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.solve_lower_into(b, &mut out);
        out
    }

    /// Solves `Lᵀ x = z` by back substitution.
    pub fn solve_upper(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= self.lower[k * d + i] * x[k];
            }
            x[i] = s / self.lower[i * d + i];
        }
        x
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `δᵀ M⁻¹ δ`.
    pub fn mahalanobis_sq(&self, delta: &[f64]) -> f64 {
        self.solve_lower(delta).iter().map(|z| z * z).sum()
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| (0..=i).map(|k| self.lower[i * d + k] * z[k]).sum())
            .collect()
    }

    /// Rebuilds `L Lᵀ` (row-major).
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                m[i * d + j] = s;
                m[j * d + i] = s;
            }
        }
        m
    }

    /// Dense `M⁻¹` (row-major). Only used for small tensor contractions.
    pub fn inverse(&self) -> Vec<f64> {
        let d = self.dim;
        let mut inv = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for c in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..d {
                inv[r * d + c] = col[r];
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (inv[i * d + j] + inv[j * d + i]);
                inv[i * d + j] = s;
                inv[j * d + i] = s;
            }
        }
        inv
    }
}

/// Cholesky factorization of a symmetric row-major `dim × dim` matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] on the first non-positive pivot.
pub fn cholesky(dim: usize, m: &[f64]) -> Result<CholeskyFactor> {
    if m.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            got: m.len(),
        });
    }
    let mut lower = vec![0.0; dim * dim];
    let mut log_det = 0.0;
    for i in 0..dim {
        for j in 0..=i {
            let mut s = m[i * dim + j];
            for k in 0..j {
                s -= lower[i * dim + k] * lower[j * dim + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                let l = s.sqrt();
                lower[i * dim + i] = l;
                log_det += 2.0 * l.ln();
            } else {
                lower[i * dim + j] = s / lower[j * dim + j];
            }
        }
    }
    Ok(CholeskyFactor {
        dim,
        lower,
        log_det,
    })
}

/// Symmetric positive-definite matrix with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
    chol: CholeskyFactor,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.data == other.data
    }
}

impl SpdMatrix {
    /// Builds from row-major entries. Small asymmetries are averaged away;
    /// anything above [`ASYMMETRY_TOLERANCE`] (relative) is rejected.
    pub fn new(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                let gap = (a - b).abs();
                if gap > ASYMMETRY_TOLERANCE * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
                let s = 0.5 * (a + b);
                data[i * dim + j] = s;
                data[j * dim + i] = s;
            }
        }
        let chol = cholesky(dim, &data)?;
        Ok(Self { dim, data, chol })
    }

    /// Builds `L Lᵀ` from a row-major lower-triangular factor with a positive
    /// diagonal, keeping `L` as the factorization. Unlike [`SpdMatrix::new`]
    /// this never refactorizes, so it succeeds even when `L Lᵀ` is too
    /// ill-conditioned for a fresh Cholesky in floating point.
    pub fn from_lower(dim: usize, mut lower: Vec<f64>) -> Result<Self> {
        if dim == 0 || lower.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: lower.len(),
            });
        }
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Cholesky factor"));
        }
        let mut log_det = 0.0;
        for i in 0..dim {
            let l = lower[i * dim + i];
            if !(l > 0.0) {
                return Err(Error::NotPositiveDefinite { index: i, pivot: l });
            }
            log_det += 2.0 * l.ln();
            for j in i + 1..dim {
                lower[i * dim + j] = 0.0;
            }
        }
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|t| lower[i * dim + t] * lower[j * dim + t]).sum();
                data[i * dim + j] = s;
                data[j * dim + i] = s;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self {
            dim,
            data,
            chol: CholeskyFactor {
                dim,
                lower,
                log_det,
            },
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidDataset("bandwidth rows must form a square matrix".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity is SPD")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        let mut data = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            data[i * d + i] = *v;
        }
        Self::new(d, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `c · M` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.dim, self.data.iter().map(|v| v * c).collect())
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SpdMatrix, b: f64) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Self::new(
            self.dim,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    /// Drops row and column 0, leaving the block that couples the
    /// remaining coordinates.
    pub fn principal_submatrix(&self) -> Result<Self> {
        if self.dim < 2 {
            return Err(Error::DimensionTooSmall(self.dim));
        }
        let d = self.dim;
        let mut data = Vec::with_capacity((d - 1) * (d - 1));
        for i in 1..d {
            data.extend_from_slice(&self.data[i * d + 1..(i + 1) * d]);
        }
        Self::new(d - 1, data)
    }

    /// Submatrix over the given index set, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let data = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::new(idx.len(), data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues_sorted(self.dim, &self.data)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SpdMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Ascending eigenvalues of a symmetric row-major matrix.
pub fn eigenvalues_sorted(dim: usize, m: &[f64]) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(dim, dim, m);
    let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Log-Cholesky coordinates of an SPD matrix: the lower triangle of `L`
/// in row-major order, with diagonal entries replaced by their logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdParam {
    pub theta: Vec<f64>,
}

impl SpdParam {
    pub fn len_for(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    /// Recovers the dimension from the parameter count.
    pub fn dim(&self) -> Option<usize> {
        let n = self.theta.len();
        (1..=64).find(|d| Self::len_for(*d) == n)
    }
}

pub fn encode_spd(m: &SpdMatrix) -> SpdParam {
    let d = m.dim();
    let l = m.cholesky();
    let mut theta = Vec::with_capacity(SpdParam::len_for(d));
    for i in 0..d {
        for j in 0..=i {
            theta.push(if i == j { l.get(i, i).ln() } else { l.get(i, j) });
        }
    }
    SpdParam { theta }
}

pub fn decode_spd(p: &SpdParam) -> Result<SpdMatrix> {
    decode_theta(&p.theta)
}

/// [`decode_spd`] on a raw coordinate slice.
pub fn decode_theta(theta: &[f64]) -> Result<SpdMatrix> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-Cholesky coordinates"));
    }
    let dim = SpdParam {
        theta: theta.to_vec(),
    }
    .dim()
    .ok_or(Error::DimensionMismatch {
        expected: 0,
        got: theta.len(),
    })?;
    let mut lower = vec![0.0; dim * dim];
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            lower[i * dim + j] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    SpdMatrix::from_lower(dim, lower)
}

/// Sample covariance (divisor `n - 1`) of row-major `n × d` values.
pub fn sample_covariance(values: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in values.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for row in values.chunks(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = cholesky(2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(l.lower(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(l.log_det(), 0.0);

        let l = cholesky(2, &[4.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!(l.lower(), &[2.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!(l.log_det(), 36f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn cholesky_two_by_two() {
        let l = cholesky(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(l.get(0, 0), 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(l.get(1, 0), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(l.get(1, 1), 1.5f64.sqrt(), epsilon = 1e-12);
        let back = l.reconstruct();
        for (a, b) in back.iter().zip([2.0, 1.0, 1.0, 2.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let err = cholesky(2, &[1.0, 2.0, 2.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn asymmetry_is_averaged_or_rejected() {
        let m = SpdMatrix::new(2, vec![2.0, 1.0 + 1e-12, 1.0, 2.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(matches!(
            SpdMatrix::new(2, vec![2.0, 1.1, 1.0, 2.0]),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn principal_submatrix_examples() {
        let m = SpdMatrix::new(2, vec![1.0, 0.5, 0.5, 2.0]).unwrap();
        assert_eq!(m.principal_submatrix().unwrap().as_slice(), &[2.0]);
        assert_eq!(
            SpdMatrix::identity(3).principal_submatrix().unwrap(),
            SpdMatrix::identity(2)
        );
        let m = SpdMatrix::new(3, vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        assert_eq!(
            m.principal_submatrix().unwrap().as_slice(),
            &[3.0, 1.0, 1.0, 4.0]
        );
        assert!(matches!(
            SpdMatrix::identity(1).principal_submatrix(),
            Err(Error::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalues_sorted(2, &[4.0, 0.0, 0.0, 1.0]), vec![1.0, 4.0]);
        let ev = eigenvalues_sorted(2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn log_cholesky_examples() {
        assert_eq!(encode_spd(&SpdMatrix::identity(2)).theta, vec![0.0, 0.0, 0.0]);
        assert_eq!(
            decode_spd(&SpdParam {
                theta: vec![0.0, 0.0, 0.0]
            })
            .unwrap(),
            SpdMatrix::identity(2)
        );
        let m = SpdMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let back = decode_spd(&encode_spd(&m)).unwrap();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10);
        }
        assert!(matches!(
            decode_theta(&[f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn inverse_and_solve_agree() {
        let m = SpdMatrix::new(3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let inv = m.cholesky().inverse();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m.get(i, k) * inv[k * 3 + j]).sum();
                assert_relative_eq!(s, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_of_known_data() {
        let cov = sample_covariance(&[1.0, 2.0, 3.0], 3, 1);
        assert_relative_eq!(cov[0], 1.0, epsilon = 1e-15);
    }
}
