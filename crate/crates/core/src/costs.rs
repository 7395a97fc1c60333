//! Cost functions evaluated lazily per configuration.
//!
//! The full cost tensor is never formed. [`CostEvaluator`] maps a
//! configuration to coordinates and dispatches on the [`CostSpec`], with an
//! optional bounded cache in front.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::measures::{Configuration, Marginal};

/// User-supplied cost: receives the configuration and its coordinates.
pub type CustomCostFn = dyn Fn(&Configuration, &[&[f64]]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum CostSpec {
    /// `|x − y|²`, two marginals only.
    Quadratic2M,
    /// Weighted mean squared deviation from the weighted mean.
    Barycenter { weights: Vec<f64> },
    /// Natural cubic spline energy through the knots at the given times.
    SplineExact { times: Vec<f64> },
    /// Second-difference approximation with equidistant step.
    SplineApprox { step: f64 },
    Custom(Arc<CustomCostFn>),
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::Quadratic2M => write!(f, "Quadratic2M"),
            CostSpec::Barycenter { weights } => write!(f, "Barycenter({weights:?})"),
            CostSpec::SplineExact { times } => write!(f, "SplineExact({times:?})"),
            CostSpec::SplineApprox { step } => write!(f, "SplineApprox(step={step})"),
            CostSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl CostSpec {
    /// Barycenter cost; weights must be nonnegative, sum to one, and have at
    /// least one positive entry.
    pub fn barycenter(weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        Ok(CostSpec::Barycenter { weights })
    }

    pub fn uniform_barycenter(n: usize) -> Self {
        CostSpec::Barycenter {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn spline_exact(times: Vec<f64>) -> Result<Self> {
        validate_times(&times)?;
        Ok(CostSpec::SplineExact { times })
    }

    pub fn spline_approx(step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "spline step must be positive, got {step}"
            )));
        }
        Ok(CostSpec::SplineApprox { step })
    }

    pub fn custom(f: impl Fn(&Configuration, &[&[f64]]) -> f64 + Send + Sync + 'static) -> Self {
        CostSpec::Custom(Arc::new(f))
    }

    /// Checks the cost against the number of marginals.
    pub fn check_arity(&self, n_marginals: usize) -> Result<()> {
        match self {
            CostSpec::Quadratic2M if n_marginals != 2 => Err(Error::CostMismatch(format!(
                "quadratic two-marginal cost with {n_marginals} marginals"
            ))),
            CostSpec::Barycenter { weights } if weights.len() != n_marginals => {
                Err(Error::CostMismatch(format!(
                    "{} weights for {n_marginals} marginals",
                    weights.len()
                )))
            }
            CostSpec::SplineExact { times } if times.len() != n_marginals => {
                Err(Error::CostMismatch(format!(
                    "{} times for {n_marginals} marginals",
                    times.len()
                )))
            }
            CostSpec::SplineExact { .. } | CostSpec::SplineApprox { .. } if n_marginals < 3 => {
                Err(Error::TooFewKnots(n_marginals))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates on explicit coordinates.
    pub fn eval_points(&self, config: &Configuration, points: &[&[f64]]) -> Result<f64> {
        match self {
            CostSpec::Quadratic2M => {
                if points.len() != 2 {
                    return Err(Error::CostMismatch(format!(
                        "quadratic two-marginal cost with {} points",
                        points.len()
                    )));
                }
                eval_quadratic_cost(points[0], points[1])
            }
            CostSpec::Barycenter { weights } => eval_barycenter_cost(points, weights),
            CostSpec::SplineExact { times } => eval_spline_cost_exact(points, times),
            CostSpec::SplineApprox { step } => eval_spline_cost_approx(points, *step),
            CostSpec::Custom(f) => Ok(f(config, points)),
        }
    }
}

pub(crate) fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("no weights".into()));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::InvalidWeights(format!("weight {i} is {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

pub(crate) fn validate_times(times: &[f64]) -> Result<()> {
    if times.len() < 3 {
        return Err(Error::TooFewKnots(times.len()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidTimes(format!(
                "times not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn common_dim(points: &[&[f64]]) -> Result<usize> {
    let d = points.first().map_or(0, |p| p.len());
    for (index, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                index,
                expected: d,
                found: p.len(),
            });
        }
    }
    Ok(d)
}

pub fn eval_quadratic_cost(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            index: 1,
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `B_λ(x) = Σ λ_i x_i`.
pub fn barycenter_map(points: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let d = common_dim(points)?;
    if points.len() != weights.len() {
        return Err(Error::CostMismatch(format!(
            "{} points for {} weights",
            points.len(),
            weights.len()
        )));
    }
    let mut b = vec![0.0; d];
    for (p, &w) in points.iter().zip(weights) {
        for (bj, pj) in b.iter_mut().zip(p.iter()) {
            *bj += w * pj;
        }
    }
    Ok(b)
}

/// `Σ λ_i |x_i − B_λ(x)|²`.
pub fn eval_barycenter_cost(points: &[&[f64]], weights: &[f64]) -> Result<f64> {
    let b = barycenter_map(points, weights)?;
    Ok(points
        .iter()
        .zip(weights)
        .map(|(p, &w)| {
            w * p
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum())
}

/// Second derivatives of the natural cubic spline at the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineMoments {
    /// `moments[j]` is the second derivative at knot `j`, one entry per
    /// spatial dimension.
    pub moments: Vec<Vec<f64>>,
    /// `intervals[j] = t_{j+1} − t_j`.
    pub intervals: Vec<f64>,
}

/// The tridiagonal system for the knot moments: sub-diagonal `mu`, diagonal
/// 2, super-diagonal `lambda`, right-hand side `rhs[j]` per dimension.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rhs: Vec<Vec<f64>>,
}

pub fn moment_system(knots: &[&[f64]], times: &[f64]) -> Result<MomentSystem> {
    if knots.len() != times.len() {
        return Err(Error::CostMismatch(format!(
            "{} knots for {} times",
            knots.len(),
            times.len()
        )));
    }
    validate_times(times)?;
    let d = common_dim(knots)?;
    let n = knots.len() - 1;
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut mu = vec![0.0; n + 1];
    let mut lambda = vec![0.0; n + 1];
    let mut rhs = vec![vec![0.0; d]; n + 1];
    for j in 1..n {
        let (hl, hr) = (h[j - 1], h[j]);
        lambda[j] = hr / (hl + hr);
        mu[j] = 1.0 - lambda[j];
        let scale = 6.0 / (hl + hr);
        for c in 0..d {
            rhs[j][c] =
                scale * ((knots[j + 1][c] - knots[j][c]) / hr - (knots[j][c] - knots[j - 1][c]) / hl);
        }
    }
    Ok(MomentSystem { mu, lambda, rhs })
}

/// Thomas algorithm for `mu[j] x[j-1] + 2 x[j] + lambda[j] x[j+1] = rhs[j]`.
fn thomas_solve(mu: &[f64], lambda: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = lambda[0] / 2.0;
    d[0] = rhs[0] / 2.0;
    for j in 1..n {
        let denom = 2.0 - mu[j] * c[j - 1];
        c[j] = lambda[j] / denom;
        d[j] = (rhs[j] - mu[j] * d[j - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    x
}

pub fn spline_moments(knots: &[&[f64]], times: &[f64]) -> Result<SplineMoments> {
    let sys = moment_system(knots, times)?;
    let d = sys.rhs[0].len();
    let n1 = knots.len();
    let mut moments = vec![vec![0.0; d]; n1];
    let mut col = vec![0.0; n1];
    for c in 0..d {
        for (j, r) in sys.rhs.iter().enumerate() {
            col[j] = r[c];
        }
        let sol = thomas_solve(&sys.mu, &sys.lambda, &col);
        for (j, v) in sol.into_iter().enumerate() {
            moments[j][c] = v;
        }
    }
    Ok(SplineMoments {
        moments,
        intervals: times.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// `∫ |ẍ|²` over `[t_0, t_N]` for the natural spline; `ẍ` is linear between
/// consecutive moments, so each interval contributes
/// `h/3 (|M_j|² + M_j·M_{j+1} + |M_{j+1}|²)`.
pub fn spline_energy(moments: &SplineMoments) -> f64 {
    moments
        .intervals
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let (a, b) = (&moments.moments[j], &moments.moments[j + 1]);
            let aa: f64 = a.iter().map(|x| x * x).sum();
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            h / 3.0 * (aa + ab + bb)
        })
        .sum()
}

pub fn eval_spline_cost_exact(knots: &[&[f64]], times: &[f64]) -> Result<f64> {
    Ok(spline_energy(&spline_moments(knots, times)?))
}

/// `Σ_{i=1}^{N−1} |x_{i+1} − 2x_i + x_{i−1}|² / τ³`.
pub fn eval_spline_cost_approx(knots: &[&[f64]], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "spline step must be positive, got {step}"
        )));
    }
    common_dim(knots)?;
    let tau3 = step * step * step;
    Ok(knots
        .windows(3)
        .map(|w| {
            w[0].iter()
                .zip(w[1].iter())
                .zip(w[2].iter())
                .map(|((a, b), c)| {
                    let s = c - 2.0 * b + a;
                    s * s
                })
                .sum::<f64>()
                / tau3
        })
        .sum())
}

/// Value of the spline at `t` from its moments. Knot times return the knot
/// itself.
pub fn eval_spline_at(knots: &[&[f64]], times: &[f64], m: &SplineMoments, t: f64) -> Vec<f64> {
    if let Some(j) = times.iter().position(|&tj| tj == t) {
        return knots[j].to_vec();
    }
    let n = times.len() - 1;
    // Interval containing t; clamp to the end intervals outside [t_0, t_N].
    let j = match times.iter().position(|&tj| tj > t) {
        Some(0) => 0,
        Some(p) => p - 1,
        None => n - 1,
    };
    let h = m.intervals[j];
    let (a, b) = (times[j + 1] - t, t - times[j]);
    let (mj, mj1) = (&m.moments[j], &m.moments[j + 1]);
    (0..knots[0].len())
        .map(|c| {
            mj[c] * a * a * a / (6.0 * h)
                + mj1[c] * b * b * b / (6.0 * h)
                + (knots[j][c] - mj[c] * h * h / 6.0) * a / h
                + (knots[j + 1][c] - mj1[c] * h * h / 6.0) * b / h
        })
        .collect()
}

/// Evaluates `eval_cost(spec, config, marginals)` with a bounded FIFO cache.
pub struct CostEvaluator<'a> {
    spec: &'a CostSpec,
    marginals: &'a [Marginal],
    cache: Option<Mutex<Cache>>,
}

struct Cache {
    map: HashMap<Configuration, f64>,
    order: VecDeque<Configuration>,
    capacity: usize,
}

impl<'a> CostEvaluator<'a> {
    pub fn new(spec: &'a CostSpec, marginals: &'a [Marginal]) -> Result<Self> {
        spec.check_arity(marginals.len())?;
        let d = marginals.first().map_or(0, Marginal::dim);
        if let Some((index, m)) = marginals.iter().enumerate().find(|(_, m)| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                index,
                expected: d,
                found: m.dim(),
            });
        }
        Ok(CostEvaluator {
            spec,
            marginals,
            cache: None,
        })
    }

    pub fn with_cache(mut self, capacity: usize) -> Self {
        self.cache = (capacity > 0).then(|| {
            Mutex::new(Cache {
                map: HashMap::with_capacity(capacity),
                order: VecDeque::with_capacity(capacity),
                capacity,
            })
        });
        self
    }

    pub fn spec(&self) -> &CostSpec {
        self.spec
    }

    pub fn marginals(&self) -> &[Marginal] {
        self.marginals
    }

    pub fn eval(&self, config: &Configuration) -> Result<f64> {
        if let Some(cache) = &self.cache {
            if let Some(&v) = cache.lock().expect("cost cache poisoned").map.get(config) {
                return Ok(v);
            }
        }
        let v = eval_cost(self.spec, config, self.marginals)?;
        if let Some(cache) = &self.cache {
            let mut c = cache.lock().expect("cost cache poisoned");
            if c.map.len() >= c.capacity {
                if let Some(old) = c.order.pop_front() {
                    c.map.remove(&old);
                }
            }
            if c.map.insert(config.clone(), v).is_none() {
                c.order.push_back(config.clone());
            }
        }
        Ok(v)
    }
}

/// Cost of a configuration: maps indices to coordinates, then dispatches.
pub fn eval_cost(spec: &CostSpec, config: &Configuration, marginals: &[Marginal]) -> Result<f64> {
    if !config.in_bounds(&crate::measures::shape_of(marginals)) {
        return Err(Error::ConfigurationOutOfBounds(config.clone()));
    }
    spec.check_arity(marginals.len())?;
    let pts = config.coordinates(marginals);
    spec.eval_points(config, &pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn barycenter_cost_examples() {
        let p = pts(&[&[1.5, 2.0], &[1.5, 2.0], &[1.5, 2.0]]);
        assert_eq!(eval_barycenter_cost(&refs(&p), &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        let p = pts(&[&[0.0], &[1.0]]);
        assert!((eval_barycenter_cost(&refs(&p), &[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        let p = pts(&[&[0.0], &[0.0], &[3.0]]);
        let w = [1.0 / 3.0; 3];
        assert!((eval_barycenter_cost(&refs(&p), &w).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn barycenter_map_examples() {
        let p = pts(&[&[0.0, 0.0], &[2.0, 4.0]]);
        assert_eq!(barycenter_map(&refs(&p), &[0.5, 0.5]).unwrap(), vec![1.0, 2.0]);
        let p = pts(&[&[0.0], &[4.0]]);
        assert_eq!(barycenter_map(&refs(&p), &[0.25, 0.75]).unwrap(), vec![3.0]);
        let p = pts(&[&[0.0], &[4.0, 1.0]]);
        assert!(barycenter_map(&refs(&p), &[0.5, 0.5]).is_err());
    }

    #[test]
    fn quadratic_cost_examples() {
        assert_eq!(eval_quadratic_cost(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(eval_quadratic_cost(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!((eval_quadratic_cost(&[0.2], &[0.5]).unwrap() - 0.09).abs() < 1e-15);
        assert!(eval_quadratic_cost(&[0.2], &[0.5, 0.0]).is_err());
    }

    #[test]
    fn hat_spline_moments_and_energy() {
        let k = pts(&[&[0.0], &[1.0], &[0.0]]);
        let t = [0.0, 0.5, 1.0];
        let m = spline_moments(&refs(&k), &t).unwrap();
        assert_eq!(m.moments.len(), 3);
        assert_eq!(m.moments[0][0], 0.0);
        assert!((m.moments[1][0] + 12.0).abs() < 1e-12);
        assert_eq!(m.moments[2][0], 0.0);
        assert!((eval_spline_cost_exact(&refs(&k), &t).unwrap() - 48.0).abs() < 1e-10);
        assert!((eval_spline_cost_approx(&refs(&k), 0.5).unwrap() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_hat_matches_problem_example() {
        // Knots (0,0), (0.5,1), (1,0): the second component is the hat.
        let k = pts(&[&[0.0, 0.0], &[0.5, 1.0], &[1.0, 0.0]]);
        let m = spline_moments(&refs(&k), &[0.0, 0.5, 1.0]).unwrap();
        assert!(m.moments[1][0].abs() < 1e-12);
        assert!((m.moments[1][1] + 12.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_knots_have_zero_cost() {
        let k = pts(&[&[0.0], &[0.25], &[0.5], &[0.75], &[1.0]]);
        let t = [0.0, 0.25, 0.5, 0.75, 1.0];
        let m = spline_moments(&refs(&k), &t).unwrap();
        assert!(m.moments.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!(eval_spline_cost_exact(&refs(&k), &t).unwrap() < 1e-20);
        assert!(eval_spline_cost_approx(&refs(&k), 0.25).unwrap() < 1e-20);
    }

    #[test]
    fn spline_rejects_bad_times_and_steps() {
        let k = pts(&[&[0.0], &[1.0], &[0.0]]);
        assert!(matches!(
            spline_moments(&refs(&k), &[0.0, 0.5, 0.5]),
            Err(Error::InvalidTimes(_))
        ));
        assert!(eval_spline_cost_approx(&refs(&k), 0.0).is_err());
        assert!(matches!(
            spline_moments(&refs(&k[..2]), &[0.0, 1.0]),
            Err(Error::TooFewKnots(2))
        ));
    }

    #[test]
    fn eval_cost_dispatch() {
        let ms = vec![
            Marginal::on_line(&[0.0, 0.5, 1.0], vec![0.2, 0.3, 0.5]).unwrap(),
            Marginal::on_line(&[1.0, 0.5, 0.0], vec![0.5, 0.3, 0.2]).unwrap(),
        ];
        let spec = CostSpec::Quadratic2M;
        let c = eval_cost(&spec, &[0, 0].into(), &ms).unwrap();
        assert_eq!(c, 1.0);
        let bad = vec![ms[0].clone(), ms[1].clone(), ms[0].clone()];
        assert!(matches!(
            eval_cost(&spec, &[0, 0, 0].into(), &bad),
            Err(Error::CostMismatch(_))
        ));
        let spec = CostSpec::uniform_barycenter(2);
        assert_eq!(eval_cost(&spec, &[1, 1].into(), &ms).unwrap(), 0.0);
        let dir = vec![
            Marginal::dirac(vec![0.0]),
            Marginal::dirac(vec![0.5]),
            Marginal::dirac(vec![1.0]),
        ];
        let spec = CostSpec::spline_approx(0.5).unwrap();
        assert_eq!(eval_cost(&spec, &[0, 0, 0].into(), &dir).unwrap(), 0.0);
    }

    #[test]
    fn cached_evaluation_is_invisible() {
        let ms = vec![
            Marginal::on_line(&[0.0, 0.5, 1.0], vec![0.2, 0.3, 0.5]).unwrap(),
            Marginal::on_line(&[1.0, 0.5, 0.0], vec![0.5, 0.3, 0.2]).unwrap(),
        ];
        let spec = CostSpec::Quadratic2M;
        let plain = CostEvaluator::new(&spec, &ms).unwrap();
        let cached = CostEvaluator::new(&spec, &ms).unwrap().with_cache(2);
        for _ in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let c = Configuration::from([i, j]);
                    assert_eq!(plain.eval(&c).unwrap(), cached.eval(&c).unwrap());
                }
            }
        }
    }

    #[test]
    fn weights_validation() {
        assert!(CostSpec::barycenter(vec![0.5, 0.5]).is_ok());
        assert!(CostSpec::barycenter(vec![1.0, 0.0, 0.0]).is_ok());
        assert!(CostSpec::barycenter(vec![0.5, 0.6]).is_err());
        assert!(CostSpec::barycenter(vec![1.5, -0.5]).is_err());
    }
}
