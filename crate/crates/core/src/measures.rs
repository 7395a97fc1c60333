//! Discrete marginals, configurations, sparse plans, dual potentials and the
//! working configuration set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Tolerance up to which a mass vector is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
/// Tolerance on `|sum(masses) - 1|` for a validated marginal.
pub const MASS_SUM_TOLERANCE: f64 = 1e-12;
/// Feasibility tolerance for plans reported as feasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// A discrete probability measure on finitely many points of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    points: Vec<Vec<f64>>,
    masses: Vec<f64>,
    label: Option<String>,
}

impl Marginal {
    /// Builds a marginal, renormalizing masses whose sum is within
    /// [`RENORMALIZE_TOLERANCE`] of one.
    pub fn new(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        check_shape(&points, &masses)?;
        let sum = kahan_sum(masses.iter().copied());
        if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(Error::MassSum {
                sum,
                tolerance: RENORMALIZE_TOLERANCE,
            });
        }
        let masses = normalize(masses, sum);
        Ok(Marginal {
            points,
            masses,
            label: None,
        })
    }

    /// Builds a marginal from arbitrary positive weights (intensities), scaled
    /// to unit mass.
    pub fn from_weights(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_shape(&points, &weights)?;
        let sum = kahan_sum(weights.iter().copied());
        let masses = normalize(weights, sum);
        Ok(Marginal {
            points,
            masses,
            label: None,
        })
    }

    /// Marginal on the real line.
    pub fn on_line(xs: &[f64], masses: Vec<f64>) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), masses)
    }

    /// Unit point mass.
    pub fn dirac(point: Vec<f64>) -> Self {
        Marginal {
            points: vec![point],
            masses: vec![1.0],
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// Number of support points `ℓ`.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Applies a permutation of the support: the new `i`-th point is the old
    /// `order[i]`-th point.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Marginal {
            points: order.iter().map(|&i| self.points[i].clone()).collect(),
            masses: order.iter().map(|&i| self.masses[i]).collect(),
            label: self.label.clone(),
        }
    }

    /// Permutation sorting the support lexicographically by coordinates.
    pub fn lexicographic_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&self.points[a], &self.points[b]);
            pa.iter()
                .zip(pb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
    }
}

fn check_shape(points: &[Vec<f64>], masses: &[f64]) -> Result<()> {
    if masses.is_empty() {
        return Err(Error::EmptyMarginal);
    }
    if points.len() != masses.len() {
        return Err(Error::LengthMismatch {
            points: points.len(),
            masses: masses.len(),
        });
    }
    let d = points[0].len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                index,
                expected: d,
                found: p.len(),
            });
        }
    }
    for (index, &value) in masses.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteMass { index });
        }
        if value <= 0.0 {
            return Err(Error::NonPositiveMass { index, value });
        }
    }
    Ok(())
}

fn normalize(mut masses: Vec<f64>, sum: f64) -> Vec<f64> {
    if sum != 1.0 {
        for m in &mut masses {
            *m /= sum;
        }
    }
    masses
}

/// Checks every [`Marginal`] invariant, reporting the first violation.
pub fn validate_marginal(m: &Marginal) -> Result<()> {
    check_shape(&m.points, &m.masses)?;
    let sum = kahan_sum(m.masses.iter().copied());
    if (sum - 1.0).abs() > MASS_SUM_TOLERANCE {
        return Err(Error::MassSum {
            sum,
            tolerance: MASS_SUM_TOLERANCE,
        });
    }
    Ok(())
}

/// Compensated (Neumaier) summation.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Support sizes `ℓ_1, ..., ℓ_N` of a family of marginals.
pub fn shape_of(marginals: &[Marginal]) -> Vec<usize> {
    marginals.iter().map(Marginal::len).collect()
}

/// Largest support of a vertex plan, `Σ(ℓ_k - 1) + 1`.
pub fn sparsity_bound(shape: &[usize]) -> usize {
    shape.iter().map(|l| l - 1).sum::<usize>() + 1
}

/// Number of configurations `Π ℓ_k`, saturating.
pub fn product_size(shape: &[usize]) -> u128 {
    shape
        .iter()
        .fold(1u128, |acc, &l| acc.saturating_mul(l as u128))
}

/// A point of the product grid, one support index per marginal.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration(Box<[u32]>);

impl Configuration {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        Configuration(indices.into_iter().map(|i| i as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> usize {
        self.0[k] as usize
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&i| i as usize)
    }

    pub fn raw(&self) -> &[u32] {
        &self.0
    }

    /// Copy with entry `k` replaced.
    pub fn with(&self, k: usize, value: usize) -> Self {
        let mut v = self.0.clone();
        v[k] = value as u32;
        Configuration(v)
    }

    pub fn in_bounds(&self, shape: &[usize]) -> bool {
        self.len() == shape.len() && self.indices().zip(shape).all(|(i, &l)| i < l)
    }

    /// Number of coordinates in which two configurations differ.
    pub fn hamming(&self, other: &Configuration) -> usize {
        self.0.iter().zip(other.0.iter()).filter(|(a, b)| a != b).count()
    }

    /// Coordinates of this configuration, one point per marginal.
    pub fn coordinates<'a>(&self, marginals: &'a [Marginal]) -> Vec<&'a [f64]> {
        self.indices()
            .zip(marginals)
            .map(|(i, m)| m.point(i))
            .collect()
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

impl<const N: usize> From<[usize; N]> for Configuration {
    fn from(v: [usize; N]) -> Self {
        Configuration::new(v)
    }
}

/// A transport plan stored by its support only.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePlan {
    shape: Vec<usize>,
    entries: BTreeMap<Configuration, f64>,
}

impl SparsePlan {
    pub fn new(shape: Vec<usize>) -> Self {
        SparsePlan {
            shape,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries(
        shape: Vec<usize>,
        entries: impl IntoIterator<Item = (Configuration, f64)>,
    ) -> Result<Self> {
        let mut plan = SparsePlan::new(shape);
        for (c, m) in entries {
            plan.add(c, m)?;
        }
        Ok(plan)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Adds mass to a configuration. Nonpositive amounts are ignored so that
    /// zeros are never stored.
    pub fn add(&mut self, config: Configuration, mass: f64) -> Result<()> {
        if !config.in_bounds(&self.shape) {
            return Err(Error::ConfigurationOutOfBounds(config));
        }
        if mass > 0.0 {
            *self.entries.entry(config).or_insert(0.0) += mass;
        }
        Ok(())
    }

    pub fn mass(&self, config: &Configuration) -> f64 {
        self.entries.get(config).copied().unwrap_or(0.0)
    }

    /// Entries in lexicographic order of configurations.
    pub fn iter(&self) -> impl Iterator<Item = (&Configuration, f64)> {
        self.entries.iter().map(|(c, &m)| (c, m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.entries.values().copied())
    }

    pub fn contains(&self, config: &Configuration) -> bool {
        self.entries.contains_key(config)
    }

    /// `⟨c, γ⟩` for a cost given per configuration.
    pub fn objective(&self, mut cost: impl FnMut(&Configuration) -> f64) -> f64 {
        kahan_sum(self.entries.iter().map(|(c, &m)| m * cost(c)))
    }
}

/// Configurations carrying positive mass.
pub fn support(plan: &SparsePlan) -> BTreeSet<Configuration> {
    plan.entries.keys().cloned().collect()
}

/// `M_k γ − μ_k` for every marginal `k`.
pub fn marginal_residuals(plan: &SparsePlan, marginals: &[Marginal]) -> Result<Vec<Vec<f64>>> {
    let shape = shape_of(marginals);
    if plan.shape != shape {
        return Err(Error::ShapeMismatch(format!(
            "plan shape {:?} vs marginal shape {:?}",
            plan.shape, shape
        )));
    }
    // Per-row compensated accumulation.
    let mut sums: Vec<Vec<(f64, f64)>> = shape.iter().map(|&l| vec![(0.0, 0.0); l]).collect();
    for (config, mass) in plan.iter() {
        for (k, i) in config.indices().enumerate() {
            let (s, c) = &mut sums[k][i];
            let t = *s + mass;
            if s.abs() >= mass.abs() {
                *c += (*s - t) + mass;
            } else {
                *c += (mass - t) + *s;
            }
            *s = t;
        }
    }
    Ok(sums
        .into_iter()
        .zip(marginals)
        .map(|(row, m)| {
            row.into_iter()
                .zip(m.masses())
                .map(|((s, c), &mu)| (s + c) - mu)
                .collect()
        })
        .collect())
}

/// `max_k ‖M_k γ − μ_k‖_∞`.
pub fn max_residual(plan: &SparsePlan, marginals: &[Marginal]) -> Result<f64> {
    Ok(marginal_residuals(plan, marginals)?
        .iter()
        .flatten()
        .fold(0.0f64, |a, r| a.max(r.abs())))
}

/// Kantorovich potentials, one vector per marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub u: Vec<Vec<f64>>,
}

impl DualPotentials {
    pub fn zeros(shape: &[usize]) -> Self {
        DualPotentials {
            u: shape.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.u.iter().map(Vec::len).collect()
    }

    /// `Σ_i u_i(r_i)`.
    pub fn sum_at(&self, config: &Configuration) -> f64 {
        config.indices().zip(&self.u).map(|(i, u)| u[i]).sum()
    }

    /// Dual objective `Σ_k ⟨μ_k, u_k⟩`.
    pub fn dual_objective(&self, marginals: &[Marginal]) -> f64 {
        kahan_sum(
            self.u
                .iter()
                .zip(marginals)
                .flat_map(|(u, m)| u.iter().zip(m.masses()).map(|(a, b)| a * b)),
        )
    }
}

/// The working set Ω with insertion ages for tail clearing.
#[derive(Debug, Clone)]
pub struct ReducedSet {
    age: HashMap<Configuration, u64>,
    by_age: BTreeMap<u64, Configuration>,
    next_age: u64,
    capacity: usize,
}

impl ReducedSet {
    pub fn new(capacity: usize) -> Self {
        ReducedSet {
            age: HashMap::new(),
            by_age: BTreeMap::new(),
            next_age: 0,
            capacity,
        }
    }

    /// Capacity `β·Σℓ_k`, rounded down.
    pub fn capacity_for(beta: f64, shape: &[usize]) -> usize {
        (beta * shape.iter().sum::<usize>() as f64).floor() as usize
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity;
    }

    pub fn len(&self) -> usize {
        self.age.len()
    }

    pub fn is_empty(&self) -> bool {
        self.age.is_empty()
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.age.contains_key(c)
    }

    pub fn age_of(&self, c: &Configuration) -> Option<u64> {
        self.age.get(c).copied()
    }

    /// Inserts with the next age; returns false if already present.
    pub fn insert(&mut self, c: Configuration) -> bool {
        if self.age.contains_key(&c) {
            return false;
        }
        let a = self.next_age;
        self.next_age += 1;
        self.age.insert(c.clone(), a);
        self.by_age.insert(a, c);
        true
    }

    pub fn remove(&mut self, c: &Configuration) -> bool {
        match self.age.remove(c) {
            Some(a) => {
                self.by_age.remove(&a);
                true
            }
            None => false,
        }
    }

    /// Members, oldest first.
    pub fn oldest_first(&self) -> impl Iterator<Item = &Configuration> {
        self.by_age.values()
    }

    pub fn over_capacity(&self) -> bool {
        self.len() > self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> Marginal {
        Marginal::on_line(&[0.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn residuals_vanish_for_dirac_identity() {
        let ms = vec![Marginal::dirac(vec![0.0]), Marginal::dirac(vec![1.0])];
        let plan = SparsePlan::from_entries(vec![1, 1], [([0, 0].into(), 1.0)]).unwrap();
        let r = marginal_residuals(&plan, &ms).unwrap();
        assert_eq!(r, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn residuals_of_diagonal_plan() {
        let ms = vec![two_point(), two_point()];
        let plan = SparsePlan::from_entries(
            vec![2, 2],
            [([0, 0].into(), 0.5), ([1, 1].into(), 0.5)],
        )
        .unwrap();
        let r = marginal_residuals(&plan, &ms).unwrap();
        assert_eq!(r, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn residuals_of_unbalanced_plan() {
        let ms = vec![two_point(), two_point()];
        let plan = SparsePlan::from_entries(vec![2, 2], [([0, 0].into(), 1.0)]).unwrap();
        let r = marginal_residuals(&plan, &ms).unwrap();
        assert_eq!(r, vec![vec![0.5, -0.5], vec![0.5, -0.5]]);
    }

    #[test]
    fn residuals_reject_shape_mismatch() {
        let ms = vec![two_point(), two_point()];
        let plan = SparsePlan::new(vec![2, 3]);
        assert!(matches!(
            marginal_residuals(&plan, &ms),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn support_lists_stored_configurations() {
        assert!(support(&SparsePlan::new(vec![3, 3])).is_empty());
        let plan = SparsePlan::from_entries(
            vec![3, 3],
            [([0, 1].into(), 0.3), ([2, 2].into(), 0.7)],
        )
        .unwrap();
        let s: Vec<_> = support(&plan).into_iter().collect();
        assert_eq!(s, vec![Configuration::from([0, 1]), Configuration::from([2, 2])]);
    }

    #[test]
    fn zero_mass_is_not_stored() {
        let mut plan = SparsePlan::new(vec![2]);
        plan.add([0].into(), 0.0).unwrap();
        assert!(plan.is_empty());
        assert!(plan.add([5].into(), 1.0).is_err());
    }

    #[test]
    fn validation_accepts_and_renormalizes() {
        let m = Marginal::on_line(&[0.0, 1.0], vec![0.5, 0.5]).unwrap();
        validate_marginal(&m).unwrap();
        let m = Marginal::on_line(&[0.0, 1.0], vec![0.5, 0.5000000001]).unwrap();
        validate_marginal(&m).unwrap();
        assert!((m.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn validation_names_offending_index() {
        let err = Marginal::on_line(&[0.0, 1.0, 2.0], vec![0.5, -0.1, 0.6]).unwrap_err();
        assert!(matches!(err, Error::NonPositiveMass { index: 1, .. }));
        let err = Marginal::on_line(&[0.0, 1.0], vec![0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::MassSum { .. }));
        let err = Marginal::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { index: 1, .. }));
    }

    #[test]
    fn reduced_set_ages_increase_and_removal_works() {
        let mut s = ReducedSet::new(10);
        assert!(s.insert([0, 0].into()));
        assert!(s.insert([1, 0].into()));
        assert!(!s.insert([0, 0].into()));
        assert!(s.age_of(&[0, 0].into()) < s.age_of(&[1, 0].into()));
        assert!(s.remove(&[0, 0].into()));
        assert_eq!(s.len(), 1);
        assert!(s.insert([0, 0].into()));
        let order: Vec<_> = s.oldest_first().cloned().collect();
        assert_eq!(order, vec![[1, 0].into(), [0, 0].into()]);
    }

    #[test]
    fn sparsity_bound_arithmetic() {
        assert_eq!(sparsity_bound(&[100, 100]), 199);
        assert_eq!(sparsity_bound(&[784; 10]), 7831);
        assert_eq!(product_size(&[4, 4, 4]), 64);
    }
}
