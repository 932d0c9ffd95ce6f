//! Nelder-Mead simplex minimizer.
//!
//! Objectives signal infeasible points by returning `+∞`; NaN is treated the
//! same way except at the starting point, where it is an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmConfig {
    /// Relative edge length of the initial simplex.
    pub init_step: f64,
    /// Absolute spread of function values that counts as converged.
    pub f_tol: f64,
    /// Max coordinate distance from the best vertex that counts as converged.
    pub x_tol: f64,
    /// Iteration cap; `None` means `500 · dim`.
    pub max_iters: Option<usize>,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NmConfig {
    fn default() -> Self {
        Self {
            init_step: 0.1,
            f_tol: 1e-8,
            x_tol: 1e-8,
            max_iters: None,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

impl NmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.init_step > 0.0
            && self.reflection > 0.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::OptimizerFailed(format!("invalid Nelder-Mead coefficients: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Cap on convergence probes per run.
const MAX_PROBES: usize = 50;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `objective` starting from `x0`.
pub fn minimize<F>(mut objective: F, x0: &[f64], config: &NmConfig) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(Error::OptimizerFailed("empty starting point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("optimizer start"));
    }
    let f0 = objective(x0);
    if f0.is_nan() {
        return Err(Error::NonFiniteStart);
    }
    let max_iters = config.max_iters.unwrap_or(500 * n);
    let mut evaluations = 1;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += config.init_step * x0[i].abs().max(1.0);
        values.push(sanitize(objective(&v)));
        evaluations += 1;
        simplex.push(v);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut probes = 0;

    loop {
        // Stable sort keeps ties in insertion order, so runs are reproducible.
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let f_spread = values[worst] - values[best];
        let x_spread = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread < config.f_tol || x_spread < config.x_tol {
            // Equal values can come from vertices straddling the minimum. Probe
            // around the best vertex before accepting; restart there on improvement.
            if x_spread >= config.x_tol && probes < MAX_PROBES {
                probes += 1;
                let step = 0.5 * x_spread;
                let anchor = simplex[best].clone();
                let mut improved = false;
                'probe: for i in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut v = anchor.clone();
                        v[i] += sign * step;
                        let fv = sanitize(objective(&v));
                        evaluations += 1;
                        if fv < values[best] {
                            improved = true;
                            break 'probe;
                        }
                    }
                }
                if improved {
                    for (k, &idx) in order.iter().enumerate() {
                        let mut v = anchor.clone();
                        if k > 0 {
                            v[k - 1] += step;
                        }
                        values[idx] = sanitize(objective(&v));
                        evaluations += 1;
                        simplex[idx] = v;
                    }
                    continue;
                }
            }
            converged = true;
            break;
        }
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &idx in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(config.reflection);
        let fr = sanitize(objective(&xr));
        evaluations += 1;

        if fr < values[best] {
            let xe = along(config.reflection * config.expansion);
            let fe = sanitize(objective(&xe));
            evaluations += 1;
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }

        let (xc, fc, accept_if) = if fr < values[worst] {
            let xc = along(config.reflection * config.contraction);
            let fc = sanitize(objective(&xc));
            (xc, fc, fr)
        } else {
            let xc = along(-config.contraction);
            let fc = sanitize(objective(&xc));
            (xc, fc, values[worst])
        };
        evaluations += 1;
        if fc < accept_if {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }

        let anchor = simplex[best].clone();
        for &idx in &order[1..] {
            let v: Vec<f64> = anchor
                .iter()
                .zip(&simplex[idx])
                .map(|(a, x)| a + config.shrink * (x - a))
                .collect();
            values[idx] = sanitize(objective(&v));
            evaluations += 1;
            simplex[idx] = v;
        }
    }

    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let best = order[0];
    Ok(NmResult {
        x_min: simplex[best].clone(),
        f_min: values[best],
        iterations,
        evaluations,
        converged,
    })
}
