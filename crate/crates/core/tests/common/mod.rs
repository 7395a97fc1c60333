//! Shared oracles and instance builders for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use gencol::costs::CostSpec;
use gencol::init::ProductIter;
use gencol::measures::{Configuration, Marginal};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

/// Full product-grid LP solved by an independent dense solver.
pub fn full_lp_objective(marginals: &[Marginal], cost: impl Fn(&Configuration) -> f64) -> f64 {
    let shape: Vec<usize> = marginals.iter().map(Marginal::len).collect();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let mut rows: Vec<Vec<Vec<(minilp::Variable, f64)>>> =
        shape.iter().map(|&l| vec![Vec::new(); l]).collect();
    for c in ProductIter::new(&shape) {
        let v = problem.add_var(cost(&c), (0.0, f64::INFINITY));
        for (k, i) in c.indices().enumerate() {
            rows[k][i].push((v, 1.0));
        }
    }
    for (k, mk) in marginals.iter().enumerate() {
        for (i, &m) in mk.masses().iter().enumerate() {
            // One redundant row per extra marginal is left out.
            if k > 0 && i + 1 == mk.len() {
                continue;
            }
            problem.add_constraint(rows[k][i].as_slice(), ComparisonOp::Eq, m);
        }
    }
    problem.solve().expect("oracle LP solves").objective()
}

/// Marginal on `0..l` with masses drawn from `[0.1, 1]` and normalized.
pub fn random_marginal(rng: &mut impl Rng, l: usize) -> Marginal {
    let w: Vec<f64> = (0..l).map(|_| rng.gen_range(0.1..1.0)).collect();
    let xs: Vec<f64> = (0..l).map(|i| i as f64).collect();
    let pts = xs.iter().map(|&x| vec![x]).collect();
    Marginal::from_weights(pts, w).unwrap()
}

/// Cost table over the product grid with entries uniform in `[0, 1)`.
pub fn random_table_cost(rng: &mut impl Rng, shape: &[usize]) -> (CostSpec, Arc<Vec<f64>>) {
    let total: usize = shape.iter().product();
    let table: Arc<Vec<f64>> = Arc::new((0..total).map(|_| rng.gen::<f64>()).collect());
    let strides = strides(shape);
    let t = table.clone();
    let spec = CostSpec::custom(move |c: &Configuration, _| {
        t[c.indices().zip(&strides).map(|(i, s)| i * s).sum::<usize>()]
    });
    (spec, table)
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

pub fn table_lookup(table: &[f64], shape: &[usize], c: &Configuration) -> f64 {
    let s = strides(shape);
    table[c.indices().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
}

/// Exact quadratic OT cost between two measures on the line via the
/// monotone coupling.
pub fn monotone_cost_1d(a: &Marginal, b: &Marginal) -> f64 {
    let sorted = |m: &Marginal| {
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&p, &q| m.point(p)[0].total_cmp(&m.point(q)[0]));
        order
    };
    let (order_a, order_b) = (sorted(a), sorted(b));
    let (mut i, mut j) = (0, 0);
    let mut ra = a.masses()[order_a[0]];
    let mut rb = b.masses()[order_b[0]];
    let mut total = 0.0;
    loop {
        let m = ra.min(rb);
        let d = a.point(order_a[i])[0] - b.point(order_b[j])[0];
        total += m * d * d;
        ra -= m;
        rb -= m;
        let adv_a = ra <= 1e-15 && i + 1 < a.len();
        let adv_b = rb <= 1e-15 && j + 1 < b.len();
        if !adv_a && !adv_b {
            break;
        }
        if adv_a {
            i += 1;
            ra = a.masses()[order_a[i]];
        }
        if adv_b {
            j += 1;
            rb = b.masses()[order_b[j]];
        }
    }
    total
}

/// Natural cubic spline built from the full piecewise-cubic coefficient
/// system, solved densely. Independent of the moment recursion used by the
/// library.
pub struct DenseSpline {
    times: Vec<f64>,
    /// `coef[dim][j] = [a, b, c, d]` for `a + bτ + cτ² + dτ³`, `τ = t − t_j`.
    coef: Vec<Vec<[f64; 4]>>,
}

impl DenseSpline {
    pub fn new(times: &[f64], knots: &[Vec<f64>]) -> Self {
        let n = times.len() - 1;
        let dims = knots[0].len();
        let size = 4 * n;
        let mut a = vec![vec![0.0; size]; size];
        let mut row = 0;
        let var = |j: usize, p: usize| 4 * j + p;
        // Interpolation at both ends of every interval.
        for j in 0..n {
            let h = times[j + 1] - times[j];
            a[row][var(j, 0)] = 1.0;
            row += 1;
            for p in 0..4 {
                a[row][var(j, p)] = h.powi(p as i32);
            }
            row += 1;
        }
        // First and second derivative continuity at interior knots.
        for j in 0..n - 1 {
            let h = times[j + 1] - times[j];
            a[row][var(j, 1)] = 1.0;
            a[row][var(j, 2)] = 2.0 * h;
            a[row][var(j, 3)] = 3.0 * h * h;
            a[row][var(j + 1, 1)] = -1.0;
            row += 1;
            a[row][var(j, 2)] = 2.0;
            a[row][var(j, 3)] = 6.0 * h;
            a[row][var(j + 1, 2)] = -2.0;
            row += 1;
        }
        // Natural end conditions.
        a[row][var(0, 2)] = 2.0;
        row += 1;
        let h = times[n] - times[n - 1];
        a[row][var(n - 1, 2)] = 2.0;
        a[row][var(n - 1, 3)] = 6.0 * h;
        row += 1;
        assert_eq!(row, size);

        let coef = (0..dims)
            .map(|d| {
                let mut rhs = vec![0.0; size];
                for j in 0..n {
                    rhs[2 * j] = knots[j][d];
                    rhs[2 * j + 1] = knots[j + 1][d];
                }
                let x = gauss_solve(a.clone(), rhs);
                (0..n).map(|j| [x[4 * j], x[4 * j + 1], x[4 * j + 2], x[4 * j + 3]]).collect()
            })
            .collect();
        DenseSpline {
            times: times.to_vec(),
            coef,
        }
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.times.len() - 1;
        (0..n).rev().find(|&j| t >= self.times[j]).unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let j = self.interval(t);
        let tau = t - self.times[j];
        self.coef
            .iter()
            .map(|c| {
                let [a, b, cc, d] = c[j];
                a + tau * (b + tau * (cc + tau * d))
            })
            .collect()
    }

    /// `|s''(t)|²` on interval `j`.
    fn curvature_sq(&self, j: usize, t: f64) -> f64 {
        let tau = t - self.times[j];
        self.coef
            .iter()
            .map(|c| {
                let v = 2.0 * c[j][2] + 6.0 * c[j][3] * tau;
                v * v
            })
            .sum()
    }

    /// Composite Simpson rule for `∫|s''|²` with `panels` panels per interval.
    pub fn energy_simpson(&self, panels: usize) -> f64 {
        let mut total = 0.0;
        for j in 0..self.times.len() - 1 {
            let (t0, t1) = (self.times[j], self.times[j + 1]);
            let h = (t1 - t0) / (2 * panels) as f64;
            let mut s = self.curvature_sq(j, t0) + self.curvature_sq(j, t1);
            for i in 1..2 * panels {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * self.curvature_sq(j, t0 + i as f64 * h);
            }
            total += s * h / 3.0;
        }
        total
    }
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            if l == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= l * a[k][j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Strictly increasing times from 0 to 1 with gaps no smaller than a tenth
/// of the mean gap.
pub fn random_times(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    let gaps: Vec<f64> = (1..count).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = gaps.iter().sum();
    let mut t = vec![0.0];
    let mut acc = 0.0;
    for g in &gaps[..gaps.len() - 1] {
        acc += g / total;
        t.push(acc);
    }
    t.push(1.0);
    t
}
