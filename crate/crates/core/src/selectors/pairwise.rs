//! Pairwise Gaussian kernel sums over a sample.
//!
//! Points are whitened by the Cholesky factor of a reference matrix and
//! sorted along the first whitened axis; for each `i` only the `j > i` whose
//! first-axis gap is within the cutoff radius are visited. Pairs past the
//! cutoff contribute less than `exp(-CUTOFF_EXPONENT)` of a coincident pair
//! and are dropped.

use crate::kde::Dataset;
use crate::linalg::SpdMatrix;

/// Pairs whose kernel is below `exp(-CUTOFF_EXPONENT)` times its peak are skipped.
pub const CUTOFF_EXPONENT: f64 = 50.0;

/// Data whitened by a matrix `M = L Lᵀ` (`z = L⁻¹ x`), sorted on `z[0]`.
pub(crate) struct Whitened {
    /// Row-major copy.
    pub z: Vec<f64>,
    /// Column-major copy, for contiguous per-axis scans.
    cols: Vec<Vec<f64>>,
    pub d: usize,
    pub n: usize,
}

impl Whitened {
    pub fn new(data: &Dataset, m: &SpdMatrix) -> Self {
        let d = data.d();
        let n = data.n();
        let chol = m.cholesky();
        let mut rows: Vec<Vec<f64>> = data.rows().map(|x| chol.solve_lower(x)).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let cols = (0..d).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        Self {
            z: rows.concat(),
            cols,
            d,
            n,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    /// One past the last `j` whose first coordinate is within `radius` of row `i`'s.
    #[inline(always)]
    fn window_end(&self, i: usize, radius: f64) -> usize {
        let first = &self.cols[0];
        let limit = first[i] + radius;
        i + 1 + first[i + 1..].partition_point(|&v| v <= limit)
    }

    /// Fills `out` with `r²` from row `i` to rows `from..to`.
    #[inline(always)]
    fn distances_between(&self, i: usize, from: usize, to: usize, out: &mut Vec<f64>) {
        let z0 = self.cols[0][i];
        out.clear();
        out.extend(self.cols[0][from..to].iter().map(|v| (v - z0) * (v - z0)));
        for col in &self.cols[1..] {
            let zi_k = col[i];
            for (acc, zj_k) in out.iter_mut().zip(&col[from..to]) {
                let t = zj_k - zi_k;
                *acc += t * t;
            }
        }
    }

    /// Calls `visit(i, j, r²)` for every pair `i < j` with `r² ≤ cutoff_r2`.
    pub fn for_each_pair<F: FnMut(usize, usize, f64)>(&self, cutoff_r2: f64, mut visit: F) {
        let radius = cutoff_r2.sqrt();
        let mut buf = Vec::new();
        for i in 0..self.n {
            let end = self.window_end(i, radius);
            self.distances_between(i, i + 1, end, &mut buf);
            for (off, &r2) in buf.iter().enumerate() {
                if r2 <= cutoff_r2 {
                    visit(i, i + 1 + off, r2);
                }
            }
        }
    }
}

/// `e^x` for `x ≤ 0`, written without branches so loops over it vectorize.
/// Relative error below `2e-16`; inputs under `-700` give `e^-700`.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    let x = x.max(-700.0);
    let t = x * LOG2E + ROUND;
    let kf = t - ROUND;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series to r^13 on |r| ≤ ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // The low mantissa bits of `t` hold k in two's complement.
    let k = t.to_bits().wrapping_sub(ROUND.to_bits());
    let scale = f64::from_bits(k.wrapping_add(1023) << 52);
    p * scale
}

/// `Σ_{i<j} exp(-r²_ij / (2 s_k))` for each scale `s_k`, with distances taken
/// after whitening by `m`.
pub(crate) fn pair_exp_sums(data: &Dataset, m: &SpdMatrix, scales: &[f64]) -> Vec<f64> {
    let w = Whitened::new(data, m);
    let max_scale = scales.iter().copied().fold(0.0, f64::max);
    let radius = (2.0 * CUTOFF_EXPONENT * max_scale).sqrt();
    let mut sums = vec![0.0; scales.len()];
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { pair_sums_avx2(&w, radius, scales, max_scale, &mut sums) };
            return sums;
        }
    }
    pair_sums_generic(&w, radius, scales, max_scale, &mut sums);
    sums
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn pair_sums_avx2(w: &Whitened, radius: f64, scales: &[f64], max_scale: f64, sums: &mut [f64]) {
    pair_sums_generic(w, radius, scales, max_scale, sums)
}

/// Kernel shared by the dispatch targets. Scales at exactly half the largest
/// reuse its exponentials squared.
#[inline(always)]
fn pair_sums_generic(w: &Whitened, radius: f64, scales: &[f64], max_scale: f64, sums: &mut [f64]) {
    let base_coef = -0.5 / max_scale;
    let mut r2 = [0.0; BLOCK];
    let mut base = [0.0; BLOCK];
    let mut tmp = [0.0; BLOCK];
    for i in 0..w.n {
        let end = w.window_end(i, radius);
        let mut from = i + 1;
        while from < end {
            let len = (end - from).min(BLOCK);
            let r2 = &mut r2[..len];
            let base = &mut base[..len];
            let tmp = &mut tmp[..len];
            r2.fill(0.0);
            for col in &w.cols {
                let zi = col[i];
                let zj = &col[from..from + len];
                for k in 0..len {
                    let t = zj[k] - zi;
                    r2[k] += t * t;
                }
            }
            for k in 0..len {
                base[k] = exp_nonpositive(base_coef * r2[k]);
            }
            for (acc, &s) in sums.iter_mut().zip(scales) {
                if s == max_scale {
                    *acc += lane_sum(base);
                    continue;
                }
                if 2.0 * s == max_scale {
                    for k in 0..len {
                        tmp[k] = base[k] * base[k];
                    }
                } else {
                    let c = -0.5 / s;
                    for k in 0..len {
                        tmp[k] = exp_nonpositive(c * r2[k]);
                    }
                }
                *acc += lane_sum(tmp);
            }
            from += len;
        }
    }
}

/// Rows per inner block; three blocks of scratch stay in L1.
const BLOCK: usize = 512;

/// Sum with four independent accumulators.
#[inline(always)]
fn lane_sum(v: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let full = v.len() / 4 * 4;
    let mut k = 0;
    while k < full {
        lanes[0] += v[k];
        lanes[1] += v[k + 1];
        lanes[2] += v[k + 2];
        lanes[3] += v[k + 3];
        k += 4;
    }
    let mut tail = 0.0;
    for x in &v[full..] {
        tail += x;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `log φ_M(0) = -½ (d log 2π + log|M|)`.
pub(crate) fn log_peak(m: &SpdMatrix) -> f64 {
    -0.5 * (m.dim() as f64 * crate::kde::LN_2PI + m.log_det())
}

/// `Σ_{i,j} φ_M(X_i - X_j)` including the diagonal.
pub(crate) fn full_kernel_sum(data: &Dataset, m: &SpdMatrix) -> f64 {
    let s = pair_exp_sums(data, m, &[1.0])[0];
    log_peak(m).exp() * (data.n() as f64 + 2.0 * s)
}
