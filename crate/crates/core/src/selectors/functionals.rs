//! Integrated density-derivative functionals `ψ_r = ∫ D^{⊗r} f(x) f(x) dx`.
//!
//! Tensors are stored flat with index `i_1 d^{r-1} + … + i_r`.

use super::pairwise::{log_peak, Whitened, CUTOFF_EXPONENT};
use crate::error::Result;
use crate::kde::Dataset;
use crate::linalg::SpdMatrix;

/// Multi-indices of a `d^r` tensor in flat order.
fn multi_indices(d: usize, r: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..d.pow(r as u32)).map(move |mut flat| {
        let mut idx = vec![0; r];
        for slot in idx.iter_mut().rev() {
            *slot = flat % d;
            flat /= d;
        }
        idx
    })
}

/// Sum over all perfect matchings of `idx` of `Π A[i_p, i_q]`.
fn matching_sum(idx: &[usize], a: &[f64], d: usize) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for k in 1..idx.len() {
        let mut rest: Vec<usize> = idx[1..].to_vec();
        let partner = rest.remove(k - 1);
        total += a[first * d + partner] * matching_sum(&rest, a, d);
    }
    total
}

/// `D^{⊗r} φ_Σ(0)` for even `r`: `(-1)^{r/2} φ_Σ(0) Σ_matchings Π Σ⁻¹`.
pub fn gaussian_derivative_at_zero(sigma: &SpdMatrix, r: usize) -> Vec<f64> {
    debug_assert!(r % 2 == 0);
    let d = sigma.dim();
    let inv = sigma.cholesky().inverse();
    let sign = if (r / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let peak = log_peak(sigma).exp();
    multi_indices(d, r)
        .map(|idx| sign * peak * matching_sum(&idx, &inv, d))
        .collect()
}

/// Normal-scale functional: `ψ_r` of `N(μ, Σ)` equals `D^{⊗r} φ_{2Σ}(0)`.
pub fn psi_normal_scale(sigma: &SpdMatrix, r: usize) -> Result<Vec<f64>> {
    Ok(gaussian_derivative_at_zero(&sigma.scaled(2.0)?, r))
}

/// Kernel estimator `ψ̂₄(G) = N⁻² Σ_{i,j} D^{⊗4} φ_G(X_i − X_j)`.
///
/// Uses the fourth-order Hermite form
/// `D⁴φ_G(x) = φ_G(x)[y⊗y⊗y⊗y − Σ₆ y⊗y⊗A + Σ₃ A⊗A]` with `A = G⁻¹`, `y = A x`,
/// accumulated through the weighted moments of `y`.
pub fn psi4_estimate(data: &Dataset, g: &SpdMatrix) -> Vec<f64> {
    let d = data.d();
    let n = data.n() as f64;
    let a = g.cholesky().inverse();
    let chol = g.cholesky();
    let w = Whitened::new(data, g);
    let d2 = d * d;
    let d4 = d2 * d2;

    // Moments over i<j of q, q·y⊗y and q·y⊗y⊗y⊗y, where q = exp(-r²/2).
    let mut m0 = 0.0;
    let mut m2 = vec![0.0; d2];
    let mut m4 = vec![0.0; d4];
    let mut y = vec![0.0; d];
    let mut yy = vec![0.0; d2];
    w.for_each_pair(2.0 * CUTOFF_EXPONENT, |i, j, r2| {
        let q = (-0.5 * r2).exp();
        // y = G⁻¹ δ = L⁻ᵀ (z_i − z_j)
        let dz: Vec<f64> = w.row(i).iter().zip(w.row(j)).map(|(p, s)| p - s).collect();
        y.copy_from_slice(&chol.solve_upper(&dz));
        m0 += q;
        for s in 0..d {
            for t in 0..d {
                yy[s * d + t] = y[s] * y[t];
                m2[s * d + t] += q * yy[s * d + t];
            }
        }
        for st in 0..d2 {
            let base = q * yy[st];
            let row = &mut m4[st * d2..(st + 1) * d2];
            for (acc, v) in row.iter_mut().zip(&yy) {
                *acc += base * v;
            }
        }
    });

    // Diagonal pairs contribute n·φ_G(0)·Σ₃ A⊗A; off-diagonal pairs appear twice.
    let peak = log_peak(g).exp();
    let total0 = n + 2.0 * m0;
    let mut out = vec![0.0; d4];
    for (flat, idx) in multi_indices(d, 4).enumerate() {
        let (p, q, r, s) = (idx[0], idx[1], idx[2], idx[3]);
        let a_ = |u: usize, v: usize| a[u * d + v];
        let m2_ = |u: usize, v: usize| m2[u * d + v];
        let quartic = 2.0 * m4[flat];
        let mixed = 2.0
            * (m2_(p, q) * a_(r, s)
                + m2_(p, r) * a_(q, s)
                + m2_(p, s) * a_(q, r)
                + m2_(q, r) * a_(p, s)
                + m2_(q, s) * a_(p, r)
                + m2_(r, s) * a_(p, q));
        let constant = total0 * (a_(p, q) * a_(r, s) + a_(p, r) * a_(q, s) + a_(p, s) * a_(q, r));
        out[flat] = peak * (quartic - mixed + constant) / (n * n);
    }
    out
}

/// `(vec H ⊗ vec H)ᵀ ψ₄`.
pub fn quartic_form(h: &SpdMatrix, psi4: &[f64]) -> f64 {
    let hv = h.as_slice();
    let d2 = hv.len();
    let mut total = 0.0;
    for (ab, hab) in hv.iter().enumerate() {
        let row = &psi4[ab * d2..(ab + 1) * d2];
        total += hab * row.iter().zip(hv).map(|(p, h)| p * h).sum::<f64>();
    }
    total
}

/// Asymptotic squared error of `ψ̂₄` with pilot `G`, given `ψ₆`:
/// `‖ c_var N⁻¹ D⁴φ_G(0) + c_bias (vecᵀG ⊗ I) ψ₆ ‖²`.
pub fn pilot_amse(g: &SpdMatrix, psi6: &[f64], n: usize, c_var: f64, c_bias: f64) -> f64 {
    let var = gaussian_derivative_at_zero(g, 4);
    let gv = g.as_slice();
    let d4 = var.len();
    let mut total = 0.0;
    for (k, v) in var.iter().enumerate() {
        let mut bias = 0.0;
        for (fg, gfg) in gv.iter().enumerate() {
            bias += gfg * psi6[fg * d4 + k];
        }
        let e = c_var * v / n as f64 + c_bias * bias;
        total += e * e;
    }
    total
}
