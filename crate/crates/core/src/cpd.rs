//! Conditional probability distributions: linear Gaussian and conditional KDE.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{log_sum_exp, Dataset, KdeModel, LN_2PI};
use crate::linalg::{cholesky, eigenvalues_sorted, SpdMatrix};
use crate::selectors::{select_bandwidth, SelectorConfig, SelectorKind};

/// Relative eigenvalue threshold below which a design matrix is rank deficient.
const RANK_TOL: f64 = 1e-10;

/// σ is clamped to this fraction of the child's sample standard deviation.
pub const SIGMA_FLOOR_RATIO: f64 = 1e-6;
/// Absolute lower bound on σ.
pub const SIGMA_FLOOR_ABS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    #[serde(rename = "LG")]
    Lg,
    #[serde(rename = "CKDE")]
    Ckde,
}

impl NodeType {
    pub fn other(self) -> Self {
        match self {
            Self::Lg => Self::Ckde,
            Self::Ckde => Self::Lg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lg => "LG",
            Self::Ckde => "CKDE",
        }
    }
}

impl std::fmt::Display for NodeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NodeType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LG" => Ok(Self::Lg),
            "CKDE" => Ok(Self::Ckde),
            other => Err(Error::InvalidSpec(format!("unknown node type `{other}`"))),
        }
    }
}

/// `X = β₀ + βᵀ pa + N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianCpd {
    pub child: String,
    pub parents: Vec<String>,
    pub beta0: f64,
    pub betas: Vec<f64>,
    pub sigma: f64,
}

impl LinearGaussianCpd {
    /// Least-squares coefficients with the maximum-likelihood (divisor N) variance.
    pub fn fit(data: &Dataset, child: &str, parents: &[String]) -> Result<Self> {
        let n = data.n();
        let p = parents.len();
        if n < p + 2 {
            return Err(Error::InsufficientSamples { needed: p + 2, got: n });
        }
        let y = data.column(data.column_index(child)?);
        let xs = parents
            .iter()
            .map(|name| data.column_index(name).map(|j| data.column(j)))
            .collect::<Result<Vec<_>>>()?;
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let x_means: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() / nf).collect();

        let betas = if p == 0 {
            Vec::new()
        } else {
            let mut sxx = vec![0.0; p * p];
            let mut sxy = vec![0.0; p];
            for i in 0..n {
                let dy = y[i] - y_mean;
                for a in 0..p {
                    let da = xs[a][i] - x_means[a];
                    sxy[a] += da * dy;
                    for b in 0..=a {
                        sxx[a * p + b] += da * (xs[b][i] - x_means[b]);
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    sxx[b * p + a] = sxx[a * p + b];
                }
            }
            let ev = eigenvalues_sorted(p, &sxx);
            if !(ev[p - 1] > 0.0) || ev[0] <= RANK_TOL * ev[p - 1] {
                return Err(Error::RankDeficient);
            }
            cholesky(p, &sxx)
                .map_err(|_| Error::RankDeficient)?
                .solve(&sxy)
        };
        let beta0 = y_mean - betas.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();

        let mut rss = 0.0;
        for i in 0..n {
            let fit = beta0 + betas.iter().zip(&xs).map(|(b, x)| b * x[i]).sum::<f64>();
            rss += (y[i] - fit) * (y[i] - fit);
        }
        let sd = (y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / (nf - 1.0)).sqrt();
        let floor = (SIGMA_FLOOR_RATIO * sd).max(SIGMA_FLOOR_ABS);
        let sigma = (rss / nf).sqrt().max(floor);
        if !sigma.is_finite() || !beta0.is_finite() || betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("linear Gaussian fit"));
        }
        Ok(Self {
            child: child.to_string(),
            parents: parents.to_vec(),
            beta0,
            betas,
            sigma,
        })
    }

    pub fn mean(&self, parent_values: &[f64]) -> f64 {
        self.beta0
            + self
                .betas
                .iter()
                .zip(parent_values)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Log density of `child | parents` for every row of `data`.
    pub fn logpdf(&self, data: &Dataset) -> Result<Vec<f64>> {
        let cols = self.columns();
        let view = data.select(&cols)?;
        let log_norm = -0.5 * LN_2PI - self.sigma.ln();
        let inv_var = 1.0 / (self.sigma * self.sigma);
        Ok(view
            .rows()
            .map(|r| {
                let e = r[0] - self.mean(&r[1..]);
                log_norm - 0.5 * e * e * inv_var
            })
            .collect())
    }

    fn columns(&self) -> Vec<String> {
        std::iter::once(self.child.clone())
            .chain(self.parents.iter().cloned())
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.betas.len() != self.parents.len() {
            return Err(Error::InvalidSpec(format!(
                "{}: {} coefficients for {} parents",
                self.child,
                self.betas.len(),
                self.parents.len()
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidSpec(format!("{}: sigma must be positive", self.child)));
        }
        Ok(())
    }
}

/// `f(x | pa) = f̂(x, pa; H) / f̂(pa; M)` with `M` the parent block of `H`.
#[derive(Debug, Clone)]
pub struct CkdeCpd {
    child: String,
    parents: Vec<String>,
    selector: SelectorKind,
    joint: KdeModel,
    marginal: Option<KdeModel>,
}

impl PartialEq for CkdeCpd {
    fn eq(&self, other: &Self) -> bool {
        self.child == other.child
            && self.parents == other.parents
            && self.selector == other.selector
            && self.joint.train() == other.joint.train()
            && self.joint.bandwidth() == other.joint.bandwidth()
    }
}

impl CkdeCpd {
    /// Selects the joint bandwidth over (child, parents…) and derives the marginal.
    pub fn fit(
        data: &Dataset,
        child: &str,
        parents: &[String],
        kind: SelectorKind,
        config: &SelectorConfig,
    ) -> Result<Self> {
        let cols: Vec<String> = std::iter::once(child.to_string())
            .chain(parents.iter().cloned())
            .collect();
        let joint_data = data.select(&cols)?;
        let h = select_bandwidth(&joint_data, kind, config)?.bandwidth;
        Self::from_parts(child, parents, kind, joint_data, h)
    }

    /// Builds a CPD from a training matrix whose columns are (child, parents…).
    pub fn from_parts(
        child: &str,
        parents: &[String],
        selector: SelectorKind,
        train: Dataset,
        bandwidth: SpdMatrix,
    ) -> Result<Self> {
        if train.d() != parents.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: parents.len() + 1,
                got: train.d(),
            });
        }
        let marginal = if parents.is_empty() {
            None
        } else {
            let m = bandwidth.principal_submatrix()?;
            let idx: Vec<usize> = (1..train.d()).collect();
            Some(KdeModel::new(train.select_indices(&idx), m)?)
        };
        Ok(Self {
            child: child.to_string(),
            parents: parents.to_vec(),
            selector,
            joint: KdeModel::new(train, bandwidth)?,
            marginal,
        })
    }

    pub fn child(&self) -> &str {
        &self.child
    }

    pub fn parents(&self) -> &[String] {
        &self.parents
    }

    pub fn selector(&self) -> SelectorKind {
        self.selector
    }

    pub fn joint(&self) -> &KdeModel {
        &self.joint
    }

    pub fn bandwidth(&self) -> &SpdMatrix {
        self.joint.bandwidth()
    }

    /// Parent block of the joint bandwidth; `None` for a root node.
    pub fn marginal_bandwidth(&self) -> Option<&SpdMatrix> {
        self.marginal.as_ref().map(KdeModel::bandwidth)
    }

    /// Conditional log density for every row of `data`.
    pub fn logpdf(&self, data: &Dataset) -> Result<Vec<f64>> {
        let cols: Vec<&str> = std::iter::once(self.child.as_str())
            .chain(self.parents.iter().map(String::as_str))
            .collect();
        let view = data.select(&cols)?;
        let mut out = self.joint.logpdf(&view)?;
        if let Some(marginal) = &self.marginal {
            let idx: Vec<usize> = (1..view.d()).collect();
            let pa = view.select_indices(&idx);
            for (o, m) in out.iter_mut().zip(marginal.logpdf(&pa)?) {
                *o -= m;
            }
        }
        Ok(out)
    }

    /// Draws the child given parent values: pick kernel `i` with weight
    /// `∝ φ_M(pa − paᵢ)`, then sample the Gaussian conditional of kernel `i`.
    pub fn sample_given<R: Rng>(&self, parent_values: &[f64], rng: &mut R) -> Result<f64> {
        let train = self.joint.train();
        let h = self.joint.bandwidth();
        let Some(marginal) = &self.marginal else {
            let i = rng.gen_range(0..train.n());
            let z: f64 = rng.sample(StandardNormal);
            return Ok(train.row(i)[0] + h.get(0, 0).sqrt() * z);
        };
        if parent_values.len() != self.parents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.parents.len(),
                got: parent_values.len(),
            });
        }
        let mut logw = Vec::with_capacity(train.n());
        marginal.log_kernels_at(parent_values, None, &mut logw);
        let total = log_sum_exp(&logw);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = logw.len() - 1;
        for (i, lw) in logw.iter().enumerate() {
            acc += (lw - total).exp();
            if u < acc {
                pick = i;
                break;
            }
        }

        // x | pa ~ N(xᵢ + h_cpᵀ M⁻¹ (pa − paᵢ), h_cc − h_cpᵀ M⁻¹ h_cp)
        let p = self.parents.len();
        let h_cp: Vec<f64> = (1..=p).map(|k| h.get(0, k)).collect();
        let coef = marginal.bandwidth().cholesky().solve(&h_cp);
        let var = h.get(0, 0) - coef.iter().zip(&h_cp).map(|(a, b)| a * b).sum::<f64>();
        let row = train.row(pick);
        let mean = row[0]
            + coef
                .iter()
                .zip(parent_values.iter().zip(&row[1..]))
                .map(|(c, (x, xi))| c * (x - xi))
                .sum::<f64>();
        let z: f64 = rng.sample(StandardNormal);
        Ok(mean + var.max(0.0).sqrt() * z)
    }
}

/// A fitted CPD of either type.
#[derive(Debug, Clone, PartialEq)]
pub enum Cpd {
    Lg(LinearGaussianCpd),
    Ckde(CkdeCpd),
}

impl Cpd {
    pub fn fit(
        data: &Dataset,
        child: &str,
        parents: &[String],
        node_type: NodeType,
        kind: SelectorKind,
        config: &SelectorConfig,
    ) -> Result<Self> {
        Ok(match node_type {
            NodeType::Lg => Cpd::Lg(LinearGaussianCpd::fit(data, child, parents)?),
            NodeType::Ckde => Cpd::Ckde(CkdeCpd::fit(data, child, parents, kind, config)?),
        })
    }

    pub fn node_type(&self) -> NodeType {
        match self {
            Cpd::Lg(_) => NodeType::Lg,
            Cpd::Ckde(_) => NodeType::Ckde,
        }
    }

    pub fn child(&self) -> &str {
        match self {
            Cpd::Lg(c) => &c.child,
            Cpd::Ckde(c) => &c.child,
        }
    }

    pub fn parents(&self) -> &[String] {
        match self {
            Cpd::Lg(c) => &c.parents,
            Cpd::Ckde(c) => &c.parents,
        }
    }

    pub fn logpdf(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            Cpd::Lg(c) => c.logpdf(data),
            Cpd::Ckde(c) => c.logpdf(data),
        }
    }

    pub fn sample_given<R: Rng>(&self, parent_values: &[f64], rng: &mut R) -> Result<f64> {
        match self {
            Cpd::Lg(c) => {
                let z: f64 = rng.sample(StandardNormal);
                Ok(c.mean(parent_values) + c.sigma * z)
            }
            Cpd::Ckde(c) => c.sample_given(parent_values, rng),
        }
    }
}

/// Serialized CPD payload.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
pub(crate) enum CpdRepr {
    #[serde(rename = "LG")]
    Lg {
        parents: Vec<String>,
        beta0: f64,
        betas: Vec<f64>,
        sigma: f64,
    },
    #[serde(rename = "CKDE")]
    Ckde {
        parents: Vec<String>,
        selector: SelectorKind,
        bandwidth: SpdMatrix,
        train: Dataset,
    },
}

impl From<&Cpd> for CpdRepr {
    fn from(c: &Cpd) -> Self {
        match c {
            Cpd::Lg(l) => CpdRepr::Lg {
                parents: l.parents.clone(),
                beta0: l.beta0,
                betas: l.betas.clone(),
                sigma: l.sigma,
            },
            Cpd::Ckde(k) => CpdRepr::Ckde {
                parents: k.parents.clone(),
                selector: k.selector,
                bandwidth: k.bandwidth().clone(),
                train: k.joint.train().clone(),
            },
        }
    }
}

impl CpdRepr {
    pub(crate) fn into_cpd(self, child: &str) -> Result<Cpd> {
        match self {
            CpdRepr::Lg {
                parents,
                beta0,
                betas,
                sigma,
            } => {
                let c = LinearGaussianCpd {
                    child: child.to_string(),
                    parents,
                    beta0,
                    betas,
                    sigma,
                };
                c.check()?;
                Ok(Cpd::Lg(c))
            }
            CpdRepr::Ckde {
                parents,
                selector,
                bandwidth,
                train,
            } => Ok(Cpd::Ckde(CkdeCpd::from_parts(
                child, &parents, selector, train, bandwidth,
            )?)),
        }
    }
}
