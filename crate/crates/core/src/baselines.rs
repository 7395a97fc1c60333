//! Entropic comparison methods: two-marginal Sinkhorn and the fixed-support
//! barycenter by iterative Bregman projections.
//!
//! Both run in the log domain by default. The regularization `epsilon` is
//! relative: the effective value is `epsilon · D²`, where `D` is the
//! diameter of the bounding box of all support points.

use serde::Serialize;

use crate::costs::validate_weights;
use crate::error::{Error, Result};
use crate::measures::{kahan_sum, Marginal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SinkhornMode {
    LogDomain,
    /// Plain scaling with the Gibbs kernel; fails on underflow.
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the L1 marginal error is at or below this.
    pub tol: f64,
    pub mode: SinkhornMode,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            epsilon: 0.05,
            max_iter: 100_000,
            tol: 1e-8,
            mode: SinkhornMode::LogDomain,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        SinkhornParams {
            epsilon,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Dense cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    /// Squared Euclidean distances between two supports.
    pub fn squared_euclidean(a: &[Vec<f64>], b: &[Vec<f64>]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| {
            a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum()
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Squared diameter of the bounding box of the given points.
pub fn squared_diameter<'a>(points: impl IntoIterator<Item = &'a Vec<f64>>) -> f64 {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for p in points {
        if lo.is_empty() {
            lo = p.clone();
            hi = p.clone();
            continue;
        }
        for d in 0..p.len() {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornResult {
    /// Log-domain potentials `f`, `g`; the plan is `exp((f_i + g_j − C_ij)/ε)`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Effective regularization `epsilon · D²`.
    pub epsilon: f64,
    /// `⟨C, π⟩`.
    pub transport_cost: f64,
    /// `⟨C, π⟩ + ε·KL(π | μ⊗ν)`.
    pub regularized_cost: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    /// L1 marginal error after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl SinkhornResult {
    /// Entropic plan entry.
    pub fn plan_at(&self, cost: &CostMatrix, i: usize, j: usize) -> f64 {
        ((self.f[i] + self.g[j] - cost.at(i, j)) / self.epsilon).exp()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Two-marginal entropic transport.
pub fn sinkhorn_2m(
    mu1: &Marginal,
    mu2: &Marginal,
    cost: &CostMatrix,
    params: &SinkhornParams,
) -> Result<SinkhornResult> {
    params.validate()?;
    let (n, m) = (mu1.len(), mu2.len());
    if cost.rows != n || cost.cols != m {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix {}x{} for supports {n} and {m}",
            cost.rows, cost.cols
        )));
    }
    let d2 = squared_diameter(mu1.points().iter().chain(mu2.points()));
    let eps = params.epsilon * if d2 > 0.0 { d2 } else { 1.0 };
    let (a, b) = (mu1.masses(), mu2.masses());
    let (la, lb): (Vec<f64>, Vec<f64>) = (
        a.iter().map(|&x| safe_ln(x)).collect(),
        b.iter().map(|&x| safe_ln(x)).collect(),
    );
    let neg_c: Vec<f64> = cost.data.iter().map(|c| -c / eps).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut history = Vec::new();
    let mut err = f64::INFINITY;
    let mut iterations = 0;

    match params.mode {
        SinkhornMode::LogDomain => {
            while iterations < params.max_iter {
                for i in 0..n {
                    let row = &neg_c[i * m..(i + 1) * m];
                    f[i] = eps * (la[i] - log_sum_exp((0..m).map(|j| g[j] / eps + row[j])));
                }
                for j in 0..m {
                    g[j] = eps
                        * (lb[j] - log_sum_exp((0..n).map(|i| f[i] / eps + neg_c[i * m + j])));
                }
                iterations += 1;
                err = row_error(&f, &g, &neg_c, eps, a);
                history.push(err);
                if err <= params.tol {
                    break;
                }
            }
        }
        SinkhornMode::Kernel => {
            let k: Vec<f64> = neg_c.iter().map(|v| v.exp()).collect();
            let mut u = vec![1.0; n];
            let mut v = vec![1.0; m];
            while iterations < params.max_iter {
                for i in 0..n {
                    let s: f64 = (0..m).map(|j| k[i * m + j] * v[j]).sum();
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SinkhornUnderflow { epsilon: eps });
                    }
                    u[i] = a[i] / s;
                }
                for j in 0..m {
                    let s: f64 = (0..n).map(|i| k[i * m + j] * u[i]).sum();
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SinkhornUnderflow { epsilon: eps });
                    }
                    v[j] = b[j] / s;
                }
                iterations += 1;
                f = u.iter().map(|x| eps * x.ln()).collect();
                g = v.iter().map(|x| eps * x.ln()).collect();
                if f.iter().chain(&g).any(|x| !x.is_finite()) {
                    return Err(Error::SinkhornUnderflow { epsilon: eps });
                }
                err = row_error(&f, &g, &neg_c, eps, a);
                history.push(err);
                if err <= params.tol {
                    break;
                }
            }
        }
    }

    let mut transport = Vec::with_capacity(n * m);
    let mut entropy = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let lp = (f[i] + g[j]) / eps + neg_c[i * m + j];
            let p = lp.exp();
            if p > 0.0 {
                transport.push(p * cost.data[i * m + j]);
                entropy.push(p * (lp - la[i] - lb[j]));
            }
        }
    }
    let transport_cost = kahan_sum(transport);
    Ok(SinkhornResult {
        f,
        g,
        epsilon: eps,
        transport_cost,
        regularized_cost: transport_cost + eps * kahan_sum(entropy),
        iterations,
        marginal_error: err,
        converged: err <= params.tol,
        history,
    })
}

fn row_error(f: &[f64], g: &[f64], neg_c: &[f64], eps: f64, a: &[f64]) -> f64 {
    let m = g.len();
    (0..f.len())
        .map(|i| {
            let s: f64 = (0..m)
                .map(|j| ((f[i] + g[j]) / eps + neg_c[i * m + j]).exp())
                .sum();
            (s - a[i]).abs()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IbpResult {
    /// Barycenter masses on the common support, summing to one.
    pub masses: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// Sum over marginals of the L1 gap between each coupling's second
    /// marginal and the barycenter.
    pub error: f64,
    pub converged: bool,
}

/// Fixed-support entropic barycenter on a common support with quadratic
/// cost. Input masses may contain zeros.
pub fn ibp_barycenter(
    support: &[Vec<f64>],
    masses: &[Vec<f64>],
    weights: &[f64],
    params: &SinkhornParams,
) -> Result<IbpResult> {
    params.validate()?;
    validate_weights(weights)?;
    let n = support.len();
    if n == 0 {
        return Err(Error::EmptyMarginal);
    }
    if masses.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} measures",
            weights.len(),
            masses.len()
        )));
    }
    for (k, mk) in masses.iter().enumerate() {
        if mk.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "measure {k} has {} entries on a support of {n}",
                mk.len()
            )));
        }
        if let Some((index, &value)) = mk.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NonPositiveMass { index, value });
        }
    }
    let d2 = squared_diameter(support.iter());
    let eps = params.epsilon * if d2 > 0.0 { d2 } else { 1.0 };
    let cost = CostMatrix::squared_euclidean(support, support);
    let neg_c: Vec<f64> = cost.data.iter().map(|c| -c / eps).collect();
    let active: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
    let log_mu: Vec<Vec<f64>> = masses
        .iter()
        .map(|mk| {
            let s: f64 = mk.iter().sum();
            mk.iter().map(|&x| safe_ln(x / s)).collect()
        })
        .collect();
    let mut f = vec![vec![0.0; n]; masses.len()];
    let mut g = vec![vec![0.0; n]; masses.len()];
    let mut log_p = vec![0.0; n];
    let mut col = vec![vec![0.0; n]; masses.len()];
    let mut iterations = 0;
    let mut error = f64::INFINITY;
    while iterations < params.max_iter {
        for &k in &active {
            for i in 0..n {
                f[k][i] = if log_mu[k][i] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    let row = &neg_c[i * n..(i + 1) * n];
                    eps * (log_mu[k][i] - log_sum_exp((0..n).map(|j| g[k][j] / eps + row[j])))
                };
            }
            for j in 0..n {
                // Kernel is symmetric, so column j equals row j.
                let row = &neg_c[j * n..(j + 1) * n];
                col[k][j] = g[k][j] / eps + log_sum_exp((0..n).map(|i| f[k][i] / eps + row[i]));
            }
        }
        for j in 0..n {
            log_p[j] = active.iter().map(|&k| weights[k] * col[k][j]).sum();
        }
        iterations += 1;
        error = active
            .iter()
            .map(|&k| {
                (0..n)
                    .map(|j| (col[k][j].exp() - log_p[j].exp()).abs())
                    .sum::<f64>()
            })
            .sum();
        if error <= params.tol {
            break;
        }
        for &k in &active {
            for j in 0..n {
                g[k][j] += eps * (log_p[j] - col[k][j]);
                if !g[k][j].is_finite() {
                    g[k][j] = f64::NEG_INFINITY;
                }
            }
        }
    }
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let s = kahan_sum(p.iter().copied());
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Numerical("barycenter mass vanished".into()));
    }
    Ok(IbpResult {
        masses: p.iter().map(|x| x / s).collect(),
        epsilon: eps,
        iterations,
        error,
        converged: error <= params.tol,
    })
}
