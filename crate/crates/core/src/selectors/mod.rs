//! Bandwidth selectors: the closed-form normal rule and the optimization-based
//! unbiased cross-validation (UCV), smoothed cross-validation (SCV) and
//! plug-in (PI) criteria.
//!
//! Data-driven selectors search over log-Cholesky coordinates of the
//! *standardized* bandwidth `S⁻¹ H S⁻¹` (with `S` the diagonal of sample
//! standard deviations), starting from the normal rule. Objective values
//! handed to Nelder-Mead are divided by the magnitude at the start point so
//! the absolute tolerances in [`NmConfig`] behave the same for any data scale.

mod functionals;
mod pairwise;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use functionals::{
    gaussian_derivative_at_zero, pilot_amse, psi4_estimate, psi_normal_scale, quartic_form,
};
pub use pairwise::CUTOFF_EXPONENT;

use crate::error::{Error, Result};
use crate::kde::Dataset;
use crate::linalg::{decode_theta, eigenvalues_sorted, encode_spd, SpdMatrix};
use crate::optimizer::{minimize, NmConfig, NmResult};
use pairwise::{full_kernel_sum, log_peak, pair_exp_sums};

/// Exponent numerator of the normal-rule constant `(4/(d+2))^{NR_CONSTANT_POWER/(d+4)}`.
/// Kept at 1 as in the SPBN normal rule; the textbook covariance-scale rule uses 2.
pub const NR_CONSTANT_POWER: f64 = 1.0;

/// Ratio below which the smallest covariance eigenvalue counts as zero.
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectorKind {
    #[default]
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "UCV")]
    Ucv,
    #[serde(rename = "SCV")]
    Scv,
    #[serde(rename = "PI")]
    Pi,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 4] = [Self::Nr, Self::Ucv, Self::Scv, Self::Pi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nr => "NR",
            Self::Ucv => "UCV",
            Self::Scv => "SCV",
            Self::Pi => "PI",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NR" => Ok(Self::Nr),
            "UCV" => Ok(Self::Ucv),
            "SCV" => Ok(Self::Scv),
            "PI" => Ok(Self::Pi),
            other => Err(Error::InvalidSpec(format!("unknown selector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub nm: NmConfig,
    /// Extra UCV runs started from the normal rule shrunk by `2^-k`, k = 1..=restarts.
    pub restarts: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            nm: NmConfig::default(),
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorResult {
    pub kind: SelectorKind,
    pub bandwidth: SpdMatrix,
    /// Criterion at the selected bandwidth; NaN for the normal rule.
    pub objective: f64,
    pub pilot: Option<SpdMatrix>,
    pub diagnostics: Option<NmResult>,
}

/// Sample covariance as an SPD matrix, or `SingularCovariance`.
pub fn covariance_matrix(data: &Dataset) -> Result<SpdMatrix> {
    if data.n() < 2 {
        return Err(Error::SingularCovariance);
    }
    let d = data.d();
    let cov = data.covariance();
    let ev = eigenvalues_sorted(d, &cov);
    if !(ev[0] > SINGULAR_RATIO * ev[d - 1]) {
        return Err(Error::SingularCovariance);
    }
    SpdMatrix::new(d, cov).map_err(|_| Error::SingularCovariance)
}

/// Scalar in front of `Σ̂` in the normal rule.
pub fn nr_factor(d: usize, n: usize, parent_count: usize) -> f64 {
    let d = d as f64;
    (4.0 / (d + 2.0)).powf(NR_CONSTANT_POWER / (d + 4.0))
        * (n as f64).powf(-2.0 / (parent_count as f64 + 5.0))
}

/// Normal-rule bandwidth `(4/(d+2))^{1/(d+4)} N^{-2/(p+5)} Σ̂`.
pub fn nr_bandwidth(data: &Dataset, parent_count: usize) -> Result<SpdMatrix> {
    let cov = covariance_matrix(data)?;
    cov.scaled(nr_factor(data.d(), data.n(), parent_count))
}

fn check_dims(data: &Dataset, m: &SpdMatrix) -> Result<()> {
    if m.dim() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            got: m.dim(),
        });
    }
    Ok(())
}

/// `R(K) = (4π)^{-d/2}` for the standard Gaussian kernel.
fn kernel_roughness(d: usize) -> f64 {
    (4.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0)
}

/// Integrated-variance term `N⁻¹ |H|^{-1/2} R(K)`.
fn integrated_variance(h: &SpdMatrix, n: usize) -> f64 {
    kernel_roughness(h.dim()) * (-0.5 * h.log_det()).exp() / n as f64
}

/// Unbiased (least-squares) cross-validation criterion
/// `N⁻² Σ_{i,j} φ_{2H}(X_i−X_j) − 2[N(N−1)]⁻¹ Σ_{i≠j} φ_H(X_i−X_j)`.
pub fn ucv_objective(data: &Dataset, h: &SpdMatrix) -> Result<f64> {
    check_dims(data, h)?;
    let n = data.n();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let sums = pair_exp_sums(data, h, &[1.0, 2.0]);
    let peak_h = log_peak(h).exp();
    let peak_2h = peak_h * 2f64.powf(-(h.dim() as f64) / 2.0);
    let convolution = peak_2h * (nf + 2.0 * sums[1]) / (nf * nf);
    let loo = 2.0 * peak_h * 2.0 * sums[0] / (nf * (nf - 1.0));
    Ok(convolution - loo)
}

/// Smoothed cross-validation criterion with pilot `G`:
/// `N⁻¹|H|^{-1/2}R(K) + N⁻² Σ_{i,j} [φ_{2H+2G} − 2φ_{H+2G} + φ_{2G}](X_i−X_j)`.
pub fn scv_objective(data: &Dataset, h: &SpdMatrix, g: &SpdMatrix) -> Result<f64> {
    ScvCriterion::new(data, g)?.eval(h)
}

/// Plug-in criterion with pilot `G`:
/// `N⁻¹|H|^{-1/2}R(K) + ¼ (vec H ⊗ vec H)ᵀ ψ̂₄(G)`.
pub fn pi_objective(data: &Dataset, h: &SpdMatrix, g: &SpdMatrix) -> Result<f64> {
    PiCriterion::new(data, g)?.eval(h)
}

/// SCV with the `H`-free pilot term cached.
pub struct ScvCriterion<'a> {
    data: &'a Dataset,
    g2: SpdMatrix,
    pilot_term: f64,
}

impl<'a> ScvCriterion<'a> {
    pub fn new(data: &'a Dataset, g: &SpdMatrix) -> Result<Self> {
        check_dims(data, g)?;
        let g2 = g.scaled(2.0)?;
        let pilot_term = full_kernel_sum(data, &g2);
        Ok(Self {
            data,
            g2,
            pilot_term,
        })
    }

    pub fn eval(&self, h: &SpdMatrix) -> Result<f64> {
        check_dims(self.data, h)?;
        let n = self.data.n() as f64;
        let wide = h.combine(2.0, &self.g2, 1.0)?;
        let mid = h.combine(1.0, &self.g2, 1.0)?;
        let bias = full_kernel_sum(self.data, &wide) - 2.0 * full_kernel_sum(self.data, &mid)
            + self.pilot_term;
        Ok(integrated_variance(h, self.data.n()) + bias / (n * n))
    }
}

/// PI with `ψ̂₄(G)` precomputed; each evaluation is `O(d⁴)`.
pub struct PiCriterion {
    n: usize,
    psi4: Vec<f64>,
}

impl PiCriterion {
    pub fn new(data: &Dataset, g: &SpdMatrix) -> Result<Self> {
        check_dims(data, g)?;
        Ok(Self {
            n: data.n(),
            psi4: psi4_estimate(data, g),
        })
    }

    pub fn from_psi4(n: usize, psi4: Vec<f64>) -> Self {
        Self { n, psi4 }
    }

    pub fn psi4(&self) -> &[f64] {
        &self.psi4
    }

    pub fn eval(&self, h: &SpdMatrix) -> Result<f64> {
        let d4 = h.dim().pow(4);
        if self.psi4.len() != d4 {
            return Err(Error::DimensionMismatch {
                expected: self.psi4.len(),
                got: d4,
            });
        }
        Ok(integrated_variance(h, self.n) + 0.25 * quartic_form(h, &self.psi4))
    }
}

/// Diagonal standardization `H = S H̃ S`.
struct Standardizer {
    sd: Vec<f64>,
}

impl Standardizer {
    fn new(cov: &SpdMatrix) -> Self {
        Self {
            sd: (0..cov.dim()).map(|i| cov.get(i, i).sqrt()).collect(),
        }
    }

    fn to_standard(&self, m: &SpdMatrix) -> Result<SpdMatrix> {
        self.apply(m, |a, b| 1.0 / (a * b))
    }

    fn from_standard(&self, m: &SpdMatrix) -> Result<SpdMatrix> {
        self.apply(m, |a, b| a * b)
    }

    fn apply(&self, m: &SpdMatrix, f: impl Fn(f64, f64) -> f64) -> Result<SpdMatrix> {
        let d = m.dim();
        let data = (0..d * d)
            .map(|k| m.as_slice()[k] * f(self.sd[k / d], self.sd[k % d]))
            .collect();
        SpdMatrix::new(d, data)
    }

    fn decode(&self, theta: &[f64]) -> Option<SpdMatrix> {
        decode_theta(theta)
            .and_then(|m| self.from_standard(&m))
            .ok()
    }
}

/// Minimizes `criterion` over SPD matrices starting at `start`, in
/// standardized log-Cholesky coordinates. Returns the best matrix, its raw
/// criterion value and the optimizer diagnostics.
fn optimize_spd<F>(
    start: &SpdMatrix,
    std: &Standardizer,
    nm: &NmConfig,
    criterion: F,
) -> Result<(SpdMatrix, f64, NmResult)>
where
    F: Fn(&SpdMatrix) -> f64,
{
    let x0 = encode_spd(&std.to_standard(start)?).theta;
    let eval = |theta: &[f64]| match std.decode(theta) {
        Some(m) => criterion(&m),
        None => f64::INFINITY,
    };
    let f0 = eval(&x0);
    let scale = if f0.is_finite() && f0 != 0.0 { f0.abs() } else { 1.0 };
    let result = minimize(|t| eval(t) / scale, &x0, nm)?;
    if !result.f_min.is_finite() {
        return Err(Error::OptimizerFailed("no finite criterion value found".into()));
    }
    let best = std
        .decode(&result.x_min)
        .ok_or_else(|| Error::OptimizerFailed("optimum left the SPD cone".into()))?;
    let value = criterion(&best);
    Ok((best, value, result))
}

/// Two-stage pilot bandwidth `G` for SCV or PI.
///
/// Stage 0 plugs normal-scale `ψ₆` (from `Σ̂`) into the asymptotic squared
/// error of the `ψ₄` estimator and locates the best multiple `c Σ̂`; stage 1
/// refines over the full SPD cone with Nelder-Mead.
pub fn pilot_bandwidth(data: &Dataset, kind: SelectorKind, nm: &NmConfig) -> Result<SpdMatrix> {
    let (c_var, c_bias) = match kind {
        SelectorKind::Pi => (1.0, 0.5),
        // SCV's bias term estimates ψ₄ with the doubled pilot 2G.
        SelectorKind::Scv => (2f64.powf(-(data.d() as f64) / 2.0 - 2.0), 1.0),
        other => {
            return Err(Error::InvalidSpec(format!("{other} has no pilot bandwidth")));
        }
    };
    let cov = covariance_matrix(data)?;
    let psi6 = psi_normal_scale(&cov, 6)?;
    let n = data.n();
    let log_amse = |g: &SpdMatrix| {
        let v = pilot_amse(g, &psi6, n, c_var, c_bias);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v.max(f64::MIN_POSITIVE).ln()
        }
    };

    // Stage 0: scan log c, then golden-section refinement around the best cell.
    let at = |log_c: f64| cov.scaled(log_c.exp()).map(|g| log_amse(&g)).unwrap_or(f64::INFINITY);
    let grid: Vec<f64> = (0..=200).map(|k| -15.0 + 0.1 * k as f64).collect();
    let best_k = (0..grid.len())
        .min_by(|&a, &b| at(grid[a]).total_cmp(&at(grid[b])))
        .unwrap_or(0);
    let (mut lo, mut hi) = (grid[best_k.saturating_sub(1)], grid[(best_k + 1).min(grid.len() - 1)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if at(a) <= at(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let start = cov.scaled((0.5 * (lo + hi)).exp())?;

    // Stage 1
    let std = Standardizer::new(&cov);
    let (g, _, _) = optimize_spd(&start, &std, nm, log_amse)?;
    Ok(g)
}

/// Selects a bandwidth for the KDE of `data` (all columns jointly).
///
/// The first column plays the child role: the normal rule uses
/// `|Pa| = d − 1`.
pub fn select_bandwidth(
    data: &Dataset,
    kind: SelectorKind,
    config: &SelectorConfig,
) -> Result<SelectorResult> {
    let d = data.d();
    let nr = nr_bandwidth(data, d - 1)?;
    if kind == SelectorKind::Nr {
        return Ok(SelectorResult {
            kind,
            bandwidth: nr,
            objective: f64::NAN,
            pilot: None,
            diagnostics: None,
        });
    }
    if data.n() < 4 {
        return Err(Error::InsufficientSamples {
            needed: 4,
            got: data.n(),
        });
    }
    let cov = covariance_matrix(data)?;
    let std = Standardizer::new(&cov);
    let finite = |v: Result<f64>| match v {
        Ok(x) if !x.is_nan() => x,
        _ => f64::INFINITY,
    };

    match kind {
        SelectorKind::Ucv => {
            let crit = |h: &SpdMatrix| finite(ucv_objective(data, h));
            let mut best = optimize_spd(&nr, &std, &config.nm, crit)?;
            for k in 1..=config.restarts {
                let start = nr.scaled(0.5f64.powi(k as i32))?;
                let run = optimize_spd(&start, &std, &config.nm, crit)?;
                if run.1 < best.1 {
                    best = run;
                }
            }
            let (bandwidth, objective, diag) = best;
            Ok(SelectorResult {
                kind,
                bandwidth,
                objective,
                pilot: None,
                diagnostics: Some(diag),
            })
        }
        SelectorKind::Scv => {
            let g = pilot_bandwidth(data, kind, &config.nm)?;
            let scv = ScvCriterion::new(data, &g)?;
            let (bandwidth, objective, diag) =
                optimize_spd(&nr, &std, &config.nm, |h| finite(scv.eval(h)))?;
            Ok(SelectorResult {
                kind,
                bandwidth,
                objective,
                pilot: Some(g),
                diagnostics: Some(diag),
            })
        }
        SelectorKind::Pi => {
            let g = pilot_bandwidth(data, kind, &config.nm)?;
            let pi = PiCriterion::new(data, &g)?;
            let (bandwidth, objective, diag) =
                optimize_spd(&nr, &std, &config.nm, |h| finite(pi.eval(h)))?;
            Ok(SelectorResult {
                kind,
                bandwidth,
                objective,
                pilot: Some(g),
                diagnostics: Some(diag),
            })
        }
        SelectorKind::Nr => unreachable!(),
    }
}

/// Criterion value of `kind` at `h`, using `pilot` for SCV/PI. NaN for NR.
pub fn objective_value(
    data: &Dataset,
    kind: SelectorKind,
    h: &SpdMatrix,
    pilot: Option<&SpdMatrix>,
) -> Result<f64> {
    let need = || Error::InvalidSpec(format!("{kind} needs a pilot bandwidth"));
    match kind {
        SelectorKind::Nr => Ok(f64::NAN),
        SelectorKind::Ucv => ucv_objective(data, h),
        SelectorKind::Scv => scv_objective(data, h, pilot.ok_or_else(need)?),
        SelectorKind::Pi => pi_objective(data, h, pilot.ok_or_else(need)?),
    }
}
