//! Feasible starting points for the reduced problem.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::{product_size, shape_of, Configuration, Marginal, ReducedSet, SparsePlan};

/// Working-set size factor used when nothing else is configured.
pub const DEFAULT_BETA: f64 = 3.0;

/// Relative threshold under which a residual mass counts as exhausted.
const EXHAUSTED: f64 = 1e-15;

/// Product sizes up to this are enumerated rather than sampled.
const ENUMERATE_LIMIT: u128 = 1 << 16;

#[derive(Debug, Clone)]
pub struct InitResult {
    pub omega: ReducedSet,
    pub plan: SparsePlan,
    /// Configurations in the order they received mass.
    pub trace: Vec<(Configuration, f64)>,
}

/// Traversal order of each support.
#[derive(Debug, Clone, Default)]
pub enum NwOrder {
    #[default]
    Stored,
    /// Lexicographic on coordinates.
    Lexicographic,
    /// One permutation per marginal.
    Custom(Vec<Vec<usize>>),
}

impl NwOrder {
    fn resolve(&self, marginals: &[Marginal]) -> Result<Vec<Vec<usize>>> {
        match self {
            NwOrder::Stored => Ok(marginals.iter().map(|m| (0..m.len()).collect()).collect()),
            NwOrder::Lexicographic => Ok(marginals.iter().map(Marginal::lexicographic_order).collect()),
            NwOrder::Custom(orders) => {
                if orders.len() != marginals.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} orderings for {} marginals",
                        orders.len(),
                        marginals.len()
                    )));
                }
                for (k, (o, m)) in orders.iter().zip(marginals).enumerate() {
                    let mut seen = vec![false; m.len()];
                    let ok = o.len() == m.len()
                        && o.iter().all(|&i| i < m.len() && !std::mem::replace(&mut seen[i], true));
                    if !ok {
                        return Err(Error::InvalidParameter(format!(
                            "ordering {k} is not a permutation of 0..{}",
                            m.len()
                        )));
                    }
                }
                Ok(orders.clone())
            }
        }
    }
}

/// Multi-marginal north-west corner rule.
///
/// Starting from the first point of every support, assigns the smallest
/// residual mass to the current configuration and advances every marginal
/// whose residual is exhausted. Stops when no marginal can advance.
pub fn nw_corner(marginals: &[Marginal], order: &NwOrder) -> Result<InitResult> {
    if marginals.is_empty() {
        return Err(Error::ShapeMismatch("no marginals".into()));
    }
    let orders = order.resolve(marginals)?;
    let shape = shape_of(marginals);
    let n = marginals.len();
    let mut pos = vec![0usize; n];
    let mut b: Vec<f64> = (0..n).map(|k| marginals[k].masses()[orders[k][0]]).collect();
    let mut plan = SparsePlan::new(shape.clone());
    let mut omega = ReducedSet::new(ReducedSet::capacity_for(DEFAULT_BETA, &shape));
    let mut trace = Vec::new();
    loop {
        let m = b.iter().copied().fold(f64::INFINITY, f64::min);
        let r = Configuration::new((0..n).map(|k| orders[k][pos[k]]));
        if m > 0.0 {
            plan.add(r.clone(), m)?;
            omega.insert(r.clone());
            trace.push((r, m));
        }
        let mut advanced = false;
        for k in 0..n {
            b[k] -= m;
            let initial = marginals[k].masses()[orders[k][pos[k]]];
            if b[k] <= EXHAUSTED * initial && pos[k] + 1 < shape[k] {
                pos[k] += 1;
                b[k] = marginals[k].masses()[orders[k][pos[k]]];
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
    }
    Ok(InitResult { omega, plan, trace })
}

/// Outcome of [`augment_random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentReport {
    pub added: usize,
    /// The product grid was exhausted before reaching the target.
    pub saturated: bool,
}

/// Fills `omega` up to `target` members with distinct uniformly random
/// configurations.
pub fn augment_random(
    omega: &mut ReducedSet,
    shape: &[usize],
    target: usize,
    seed: u64,
) -> AugmentReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = product_size(shape);
    let start = omega.len();
    if target <= start {
        return AugmentReport {
            added: 0,
            saturated: false,
        };
    }
    let need = target - start;
    if total <= ENUMERATE_LIMIT || (total - start as u128) <= 2 * need as u128 {
        // Small or nearly full grid: enumerate what is missing.
        let mut missing: Vec<Configuration> = ProductIter::new(shape)
            .filter(|c| !omega.contains(c))
            .collect();
        let saturated = missing.len() < need;
        missing.shuffle(&mut rng);
        missing.truncate(need);
        let added = missing.len();
        for c in missing {
            omega.insert(c);
        }
        return AugmentReport { added, saturated };
    }
    let mut added = 0;
    while added < need {
        let c = Configuration::new(shape.iter().map(|&l| rng.gen_range(0..l)));
        if omega.insert(c) {
            added += 1;
        }
    }
    AugmentReport {
        added,
        saturated: false,
    }
}

/// Plan carrying `μ_1` onto its mirror image: mass `μ_1(i)` on `(i, ℓ-1-i)`.
pub fn reflection_init(mu1: &Marginal, mu2: &Marginal) -> Result<InitResult> {
    let l = mu1.len();
    if mu2.len() != l {
        return Err(Error::NotReflected(format!(
            "support sizes {} and {} differ",
            l,
            mu2.len()
        )));
    }
    for i in 0..l {
        let (a, b) = (mu1.masses()[i], mu2.masses()[l - 1 - i]);
        if (a - b).abs() > 1e-12 {
            return Err(Error::NotReflected(format!(
                "mass {a} at index {i} against {b} at index {}",
                l - 1 - i
            )));
        }
    }
    let shape = vec![l, l];
    let mut plan = SparsePlan::new(shape.clone());
    let mut omega = ReducedSet::new(ReducedSet::capacity_for(DEFAULT_BETA, &shape));
    let mut trace = Vec::with_capacity(l);
    for i in 0..l {
        let r = Configuration::new([i, l - 1 - i]);
        let m = mu1.masses()[i];
        plan.add(r.clone(), m)?;
        omega.insert(r.clone());
        trace.push((r, m));
    }
    Ok(InitResult { omega, plan, trace })
}

/// Lexicographic enumeration of the product grid.
#[derive(Debug, Clone)]
pub struct ProductIter {
    shape: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl ProductIter {
    pub fn new(shape: &[usize]) -> Self {
        let next = if shape.iter().all(|&l| l > 0) {
            Some(vec![0; shape.len()])
        } else {
            None
        };
        ProductIter {
            shape: shape.to_vec(),
            next,
        }
    }
}

impl Iterator for ProductIter {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        let cur = self.next.take()?;
        let out = Configuration::new(cur.iter().copied());
        let mut nxt = cur;
        for k in (0..nxt.len()).rev() {
            nxt[k] += 1;
            if nxt[k] < self.shape[k] {
                self.next = Some(nxt);
                return Some(out);
            }
            nxt[k] = 0;
        }
        Some(out)
    }
}
