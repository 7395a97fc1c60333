//! The reduced primal problem on a configuration set Ω and its dual.
//!
//! Rows are the marginal constraints `(k, i)`; every column is the 0/1
//! incidence vector of a configuration. The `N − 1` redundant rows are
//! removed by dropping the last row of marginals `2..N`, which leaves
//! `Σ(ℓ_k − 1) + 1` rows. Potentials of dropped rows are reported as zero,
//! so reduced costs computed from the full potentials coincide with the
//! simplex reduced costs.
//!
//! The solver is a revised primal simplex: phase one with artificial
//! variables, optionally crashed with a seed set of columns; phase two with
//! devex pricing and a switch to Bland's rule after a run of degenerate
//! pivots. The factorized basis survives [`ReducedLp::add_column`] and
//! [`ReducedLp::remove_columns`], so successive solves are warm.

mod factor;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use log::debug;

use crate::error::{Error, Result};
use crate::measures::{kahan_sum, Configuration, DualPotentials, Marginal, SparsePlan};
use factor::Factor;

/// Solver tolerances, shared with the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub optimality: f64,
    pub zero_pivot: f64,
    /// Smallest FTRAN entry eligible as a pivot in the ratio test.
    pub ratio_pivot: f64,
    /// Primal residual that forces a refactorization.
    pub drift: f64,
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Basic values at or below this are reported as zero mass.
    pub zero_mass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-9,
            optimality: 1e-9,
            zero_pivot: 1e-11,
            ratio_pivot: 1e-9,
            drift: 1e-7,
            refactor_interval: 100,
            bland_after: 50,
            zero_mass: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// One basic variable of a warm-start descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BasisEntry {
    Column(Configuration),
    Artificial(usize),
}

/// Opaque warm-start state: the basic variables in basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDescriptor {
    token: u64,
    entries: Vec<BasisEntry>,
}

impl BasisDescriptor {
    pub fn entries(&self) -> &[BasisEntry] {
        &self.entries
    }

    /// Configurations in the basis.
    pub fn columns(&self) -> impl Iterator<Item = &Configuration> {
        self.entries.iter().filter_map(|e| match e {
            BasisEntry::Column(c) => Some(c),
            BasisEntry::Artificial(_) => None,
        })
    }
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub plan: SparsePlan,
    pub potentials: DualPotentials,
    pub objective: f64,
    pub basis: Option<BasisDescriptor>,
    /// Simplex pivots performed by this solve.
    pub pivots: usize,
}

/// `Σ_i u_i(r_i) − c(r)`; positive iff the dual constraint at `r` is
/// violated.
pub fn dual_violation(potentials: &DualPotentials, r: &Configuration, cost: f64) -> f64 {
    potentials.sum_at(r) - cost
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    Col(usize),
    Art(usize),
}

const NONBASIC: u32 = u32::MAX;
/// Reference weights above this restart the devex framework.
const DEVEX_RESET: f64 = 1e8;
const DROPPED: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Simplex {
    token: u64,
    basis: Vec<Var>,
    x: Vec<f64>,
    factor: Factor,
    /// Basis position of each column, or `NONBASIC`.
    col_pos: Vec<u32>,
    /// Devex reference weights, one per column.
    weights: Vec<f64>,
    /// Artificials that may still be basic; once one leaves it is gone.
    phase_two: bool,
}

#[derive(Debug, Clone)]
pub struct ReducedLp {
    shape: Vec<usize>,
    /// First kept row of each marginal.
    offsets: Vec<usize>,
    m: usize,
    rhs: Vec<f64>,
    masses: Vec<Vec<f64>>,
    columns: Vec<Configuration>,
    costs: Vec<f64>,
    /// Kept rows of each column, `N` slots per column (`DROPPED` for none).
    col_rows: Vec<u32>,
    index: HashMap<Configuration, usize>,
    tol: Tolerances,
    max_iterations: Option<usize>,
    crash_seed: Vec<Configuration>,
    state: Option<Simplex>,
}

impl ReducedLp {
    pub fn new(marginals: &[Marginal]) -> Result<Self> {
        Self::with_tolerances(marginals, Tolerances::default())
    }

    pub fn with_tolerances(marginals: &[Marginal], tol: Tolerances) -> Result<Self> {
        Self::from_masses(
            marginals.iter().map(|m| m.masses().to_vec()).collect(),
            tol,
        )
    }

    /// Builds the empty problem from the right-hand side masses.
    pub fn from_masses(masses: Vec<Vec<f64>>, tol: Tolerances) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::ShapeMismatch("no marginals".into()));
        }
        for (k, mk) in masses.iter().enumerate() {
            if mk.is_empty() {
                return Err(Error::EmptyMarginal);
            }
            if let Some((index, &value)) = mk.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveMass { index, value });
            }
            let s = kahan_sum(mk.iter().copied());
            if (s - 1.0).abs() > tol.feasibility {
                return Err(Error::ShapeMismatch(format!(
                    "marginal {k} sums to {s}, not 1"
                )));
            }
        }
        let shape: Vec<usize> = masses.iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(shape.len());
        let mut m = 0;
        let mut rhs = Vec::new();
        for (k, mk) in masses.iter().enumerate() {
            offsets.push(m);
            let kept = if k == 0 { mk.len() } else { mk.len() - 1 };
            rhs.extend_from_slice(&mk[..kept]);
            m += kept;
        }
        Ok(ReducedLp {
            shape,
            offsets,
            m,
            rhs,
            masses,
            columns: Vec::new(),
            costs: Vec::new(),
            col_rows: Vec::new(),
            index: HashMap::new(),
            tol,
            max_iterations: None,
            crash_seed: Vec::new(),
            state: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of constraint rows kept, `Σ(ℓ_k − 1) + 1`.
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Configuration] {
        &self.columns
    }

    pub fn cost_of(&self, r: &Configuration) -> Option<f64> {
        self.index.get(r).map(|&j| self.costs[j])
    }

    pub fn contains(&self, r: &Configuration) -> bool {
        self.index.contains_key(r)
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn set_max_iterations(&mut self, limit: usize) {
        self.max_iterations = Some(limit);
    }

    /// Columns tried first when building a basis from scratch.
    pub fn set_crash_seed(&mut self, seed: impl IntoIterator<Item = Configuration>) {
        self.crash_seed = seed.into_iter().collect();
    }

    /// Whether `r` is basic in the current warm state.
    pub fn is_basic(&self, r: &Configuration) -> bool {
        match (&self.state, self.index.get(r)) {
            (Some(s), Some(&j)) => s.col_pos[j] != NONBASIC,
            _ => false,
        }
    }

    fn row_of(&self, k: usize, i: usize) -> u32 {
        if k > 0 && i + 1 == self.shape[k] {
            DROPPED
        } else {
            (self.offsets[k] + i) as u32
        }
    }

    fn rows_of(&self, j: usize) -> &[u32] {
        let n = self.shape.len();
        &self.col_rows[j * n..(j + 1) * n]
    }

    fn kept_rows(&self, j: usize) -> Vec<u32> {
        self.rows_of(j)
            .iter()
            .copied()
            .filter(|&r| r != DROPPED)
            .collect()
    }

    pub fn add_column(&mut self, r: Configuration, cost: f64) -> Result<()> {
        if !r.in_bounds(&self.shape) {
            return Err(Error::ConfigurationOutOfBounds(r));
        }
        if self.index.contains_key(&r) {
            return Err(Error::DuplicateColumn(r));
        }
        if !cost.is_finite() {
            return Err(Error::Numerical(format!("non-finite cost for {r:?}")));
        }
        let j = self.columns.len();
        for (k, i) in r.indices().enumerate() {
            let row = self.row_of(k, i);
            self.col_rows.push(row);
        }
        self.index.insert(r.clone(), j);
        self.columns.push(r);
        self.costs.push(cost);
        if let Some(s) = &mut self.state {
            s.col_pos.push(NONBASIC);
            s.weights.push(1.0);
        }
        Ok(())
    }

    /// Removes nonbasic columns; the basis is unaffected.
    pub fn remove_columns<'c>(
        &mut self,
        rs: impl IntoIterator<Item = &'c Configuration>,
    ) -> Result<()> {
        let mut drop = vec![false; self.columns.len()];
        for r in rs {
            let &j = self
                .index
                .get(r)
                .ok_or_else(|| Error::UnknownColumn(r.clone()))?;
            if let Some(s) = &self.state {
                if s.col_pos[j] != NONBASIC {
                    return Err(Error::ActiveColumn(r.clone()));
                }
            }
            drop[j] = true;
        }
        if !drop.iter().any(|&d| d) {
            return Ok(());
        }
        let n = self.shape.len();
        let mut new_index = vec![usize::MAX; self.columns.len()];
        let mut next = 0;
        for (j, &d) in drop.iter().enumerate() {
            if !d {
                new_index[j] = next;
                next += 1;
            }
        }
        let old_cols = std::mem::take(&mut self.columns);
        let old_costs = std::mem::take(&mut self.costs);
        let old_rows = std::mem::take(&mut self.col_rows);
        self.index.clear();
        for (j, (c, cost)) in old_cols.into_iter().zip(old_costs).enumerate() {
            if drop[j] {
                continue;
            }
            self.index.insert(c.clone(), self.columns.len());
            self.columns.push(c);
            self.costs.push(cost);
            self.col_rows.extend_from_slice(&old_rows[j * n..(j + 1) * n]);
        }
        if let Some(s) = &mut self.state {
            for v in &mut s.basis {
                if let Var::Col(j) = v {
                    *j = new_index[*j];
                }
            }
            let old_pos = std::mem::take(&mut s.col_pos);
            s.col_pos = old_pos
                .into_iter()
                .enumerate()
                .filter(|&(j, _)| !drop[j])
                .map(|(_, p)| p)
                .collect();
            let old_weights = std::mem::take(&mut s.weights);
            s.weights = old_weights
                .into_iter()
                .enumerate()
                .filter(|&(j, _)| !drop[j])
                .map(|(_, w)| w)
                .collect();
        }
        Ok(())
    }

    /// Descriptor of the current warm state, if any.
    pub fn basis(&self) -> Option<BasisDescriptor> {
        self.state.as_ref().map(|s| self.describe(s))
    }

    fn describe(&self, s: &Simplex) -> BasisDescriptor {
        BasisDescriptor {
            token: s.token,
            entries: s
                .basis
                .iter()
                .map(|v| match *v {
                    Var::Col(j) => BasisEntry::Column(self.columns[j].clone()),
                    Var::Art(r) => BasisEntry::Artificial(r),
                })
                .collect(),
        }
    }

    /// Solves the reduced problem. With a descriptor matching the internal
    /// warm state the factorization is reused as is; any other descriptor is
    /// refactorized; `None` starts from the crash basis.
    pub fn solve(&mut self, warm: Option<&BasisDescriptor>) -> Result<LpSolution> {
        if self.columns.is_empty() {
            return Ok(self.infeasible_solution(0));
        }
        let state = match warm {
            Some(desc) => match self.state.take() {
                Some(s) if s.token == desc.token => Some(s),
                _ => self.state_from_descriptor(desc),
            },
            None => None,
        };
        let mut state = match state {
            Some(s) => s,
            None => self.cold_state(),
        };
        let limit = self
            .max_iterations
            .unwrap_or(100 * (self.m + self.columns.len()) + 1000);
        let mut pivots = 0;

        if !state.phase_two {
            match self.iterate(&mut state, true, limit, &mut pivots)? {
                LpStatus::Optimal => {}
                status => {
                    self.state = None;
                    let mut sol = self.infeasible_solution(pivots);
                    sol.status = status;
                    return Ok(sol);
                }
            }
            let infeas: f64 = state
                .basis
                .iter()
                .zip(&state.x)
                .filter(|(v, _)| matches!(v, Var::Art(_)))
                .map(|(_, x)| *x)
                .sum();
            if infeas > self.tol.feasibility {
                debug!("phase one ended with infeasibility {infeas:e}");
                self.state = None;
                return Ok(self.infeasible_solution(pivots));
            }
            for (v, x) in state.basis.iter().zip(state.x.iter_mut()) {
                if matches!(v, Var::Art(_)) {
                    *x = 0.0;
                }
            }
            state.phase_two = true;
        }
        let status = self.iterate(&mut state, false, limit, &mut pivots)?;
        let sol = self.extract(&state, status, pivots);
        self.state = Some(state);
        Ok(sol)
    }

    fn infeasible_solution(&self, pivots: usize) -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            plan: SparsePlan::new(self.shape.clone()),
            potentials: DualPotentials::zeros(&self.shape),
            objective: f64::NAN,
            basis: None,
            pivots,
        }
    }

    fn fresh_token() -> u64 {
        NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
    }

    fn var_rows(&self, v: Var) -> Vec<u32> {
        match v {
            Var::Col(j) => self.kept_rows(j),
            Var::Art(r) => vec![r as u32],
        }
    }

    fn factorize(&self, basis: &[Var]) -> std::result::Result<Factor, factor::Singular> {
        let rows: Vec<Vec<u32>> = basis.iter().map(|&v| self.var_rows(v)).collect();
        let refs: Vec<&[u32]> = rows.iter().map(Vec::as_slice).collect();
        Factor::new(self.m, &refs, self.tol.zero_pivot)
    }

    fn state_from_descriptor(&self, desc: &BasisDescriptor) -> Option<Simplex> {
        if desc.entries.len() != self.m {
            return None;
        }
        let mut basis = Vec::with_capacity(self.m);
        for e in &desc.entries {
            basis.push(match e {
                BasisEntry::Column(c) => Var::Col(*self.index.get(c)?),
                BasisEntry::Artificial(r) if *r < self.m => Var::Art(*r),
                BasisEntry::Artificial(_) => return None,
            });
        }
        let factor = self.factorize(&basis).ok()?;
        let mut x = factor.ftran(&self.rhs);
        let mut art_mass = 0.0;
        for (v, xi) in basis.iter().zip(x.iter_mut()) {
            if *xi < -self.tol.feasibility {
                return None;
            }
            *xi = xi.max(0.0);
            if matches!(v, Var::Art(_)) {
                art_mass += *xi;
            }
        }
        let mut col_pos = vec![NONBASIC; self.columns.len()];
        for (p, v) in basis.iter().enumerate() {
            if let Var::Col(j) = v {
                col_pos[*j] = p as u32;
            }
        }
        Some(Simplex {
            token: Self::fresh_token(),
            basis,
            x,
            factor,
            col_pos,
            weights: vec![1.0; self.columns.len()],
            phase_two: art_mass <= self.tol.feasibility,
        })
    }

    /// All-artificial basis, crashed with the seed columns where that keeps
    /// the basic solution nonnegative.
    fn cold_state(&self) -> Simplex {
        let identity = || Simplex {
            token: Self::fresh_token(),
            basis: (0..self.m).map(Var::Art).collect(),
            x: self.rhs.clone(),
            factor: Factor::identity(self.m),
            col_pos: vec![NONBASIC; self.columns.len()],
            weights: vec![1.0; self.columns.len()],
            phase_two: false,
        };
        let mut s = identity();
        let mut crashed = 0;
        for c in &self.crash_seed {
            let Some(&j) = self.index.get(c) else { continue };
            if s.col_pos[j] != NONBASIC {
                continue;
            }
            let d = s.factor.ftran_unit_sum(&self.kept_rows(j));
            let best = s
                .basis
                .iter()
                .enumerate()
                .filter(|(_, v)| matches!(v, Var::Art(_)))
                .map(|(p, _)| (p, d[p].abs()))
                .filter(|&(_, a)| a > 1e-3)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((p, _)) = best {
                s.factor.push_eta(p, &d);
                s.basis[p] = Var::Col(j);
                s.col_pos[j] = p as u32;
                crashed += 1;
            }
        }
        if crashed == 0 {
            return s;
        }
        let Ok(factor) = self.factorize(&s.basis) else {
            return identity();
        };
        let x = factor.ftran(&self.rhs);
        if x.iter().any(|&v| v < -self.tol.feasibility) {
            debug!("crash basis infeasible, starting from artificials");
            return identity();
        }
        s.factor = factor;
        s.x = x.into_iter().map(|v| v.max(0.0)).collect();
        let art_mass: f64 = s
            .basis
            .iter()
            .zip(&s.x)
            .filter(|(v, _)| matches!(v, Var::Art(_)))
            .map(|(_, x)| *x)
            .sum();
        s.phase_two = art_mass <= self.tol.feasibility;
        if s.phase_two {
            for (v, x) in s.basis.iter().zip(s.x.iter_mut()) {
                if matches!(v, Var::Art(_)) {
                    *x = 0.0;
                }
            }
        }
        s
    }

    fn var_cost(&self, v: Var, phase_one: bool) -> f64 {
        match (v, phase_one) {
            (Var::Col(_), true) => 0.0,
            (Var::Art(_), true) => 1.0,
            (Var::Col(j), false) => self.costs[j],
            (Var::Art(_), false) => 0.0,
        }
    }

    fn refactor(&self, s: &mut Simplex) -> Result<()> {
        s.factor = self
            .factorize(&s.basis)
            .map_err(|e| Error::Numerical(format!("singular basis at position {}", e.position)))?;
        let x = s.factor.ftran(&self.rhs);
        for ((v, xi), new) in s.basis.iter().zip(s.x.iter_mut()).zip(x) {
            *xi = if s.phase_two && matches!(v, Var::Art(_)) {
                0.0
            } else {
                new.max(0.0)
            };
        }
        Ok(())
    }

    fn primal_residual(&self, s: &Simplex) -> f64 {
        let mut r = self.rhs.clone();
        for (&v, &x) in s.basis.iter().zip(&s.x) {
            if x == 0.0 {
                continue;
            }
            match v {
                Var::Col(j) => {
                    for &row in self.rows_of(j) {
                        if row != DROPPED {
                            r[row as usize] -= x;
                        }
                    }
                }
                Var::Art(row) => r[row] -= x,
            }
        }
        r.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn iterate(
        &self,
        s: &mut Simplex,
        phase_one: bool,
        limit: usize,
        pivots: &mut usize,
    ) -> Result<LpStatus> {
        let tol = self.tol;
        let n = self.shape.len();
        let mut degenerate_run = 0usize;
        let mut bland = false;
        // Duals are updated from the pivot row between refactorizations and
        // recomputed before optimality is declared.
        let mut duals: Option<Vec<f64>> = None;
        loop {
            if *pivots >= limit {
                return Ok(LpStatus::IterationLimit);
            }
            let (mut y, fresh) = match duals.take() {
                Some(y) => (y, false),
                None => {
                    let c_b: Vec<f64> =
                        s.basis.iter().map(|&v| self.var_cost(v, phase_one)).collect();
                    (s.factor.btran(&c_b), true)
                }
            };

            // Devex pricing over nonbasic columns (artificials never
            // re-enter); Bland's rule takes the first candidate.
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.columns.len() {
                if s.col_pos[j] != NONBASIC {
                    continue;
                }
                let cj = if phase_one { 0.0 } else { self.costs[j] };
                let mut rc = cj;
                for &r in &self.col_rows[j * n..(j + 1) * n] {
                    if r != DROPPED {
                        rc -= y[r as usize];
                    }
                }
                if rc < -tol.optimality {
                    if bland {
                        entering = Some((j, rc, 0.0));
                        break;
                    }
                    let score = rc * rc / s.weights[j];
                    if entering.map_or(true, |(_, _, best)| score > best) {
                        entering = Some((j, rc, score));
                    }
                }
            }
            let Some((q, rc_q, _)) = entering else {
                if fresh {
                    return Ok(LpStatus::Optimal);
                }
                continue;
            };
            let d = s.factor.ftran_unit_sum(&self.kept_rows(q));

            let locked = |p: usize| s.phase_two && matches!(s.basis[p], Var::Art(_));
            let leave = if bland {
                let mut best: Option<(usize, f64)> = None;
                for p in 0..self.m {
                    let ratio = if locked(p) {
                        if d[p].abs() > tol.ratio_pivot {
                            0.0
                        } else {
                            continue;
                        }
                    } else if d[p] > tol.ratio_pivot {
                        s.x[p] / d[p]
                    } else {
                        continue;
                    };
                    best = match best {
                        None => Some((p, ratio)),
                        Some((bp, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12
                                    && var_order(s.basis[p]) < var_order(s.basis[bp]))
                            {
                                Some((p, ratio))
                            } else {
                                Some((bp, br))
                            }
                        }
                    };
                }
                best
            } else {
                // Harris two-pass ratio test.
                let mut theta_max = f64::INFINITY;
                for p in 0..self.m {
                    if locked(p) {
                        if d[p].abs() > tol.ratio_pivot {
                            theta_max = theta_max.min(tol.feasibility / d[p].abs());
                        }
                    } else if d[p] > tol.ratio_pivot {
                        theta_max = theta_max.min((s.x[p] + tol.feasibility) / d[p]);
                    }
                }
                let mut best: Option<(usize, f64, f64)> = None;
                for p in 0..self.m {
                    let (ratio, mag) = if locked(p) {
                        if d[p].abs() > tol.ratio_pivot {
                            (0.0, d[p].abs() * 1e3)
                        } else {
                            continue;
                        }
                    } else if d[p] > tol.ratio_pivot {
                        (s.x[p] / d[p], d[p])
                    } else {
                        continue;
                    };
                    if ratio <= theta_max && best.map_or(true, |(_, _, bm)| mag > bm) {
                        best = Some((p, ratio, mag));
                    }
                }
                best.map(|(p, r, _)| (p, r))
            };
            let Some((p, ratio)) = leave else {
                return Err(Error::Numerical("unbounded direction in reduced problem".into()));
            };
            let theta = ratio.max(0.0);

            // Row p of the outgoing basis inverse gives the dual step and the
            // pivot row for the reference weights.
            let mut unit = vec![0.0; self.m];
            unit[p] = 1.0;
            let rho = s.factor.btran(&unit);
            let alpha_q = d[p];
            let step = rc_q / alpha_q;
            for (yi, r) in y.iter_mut().zip(&rho) {
                *yi += step * r;
            }
            let w_q = s.weights[q];
            let mut overflow = false;
            for j in 0..self.columns.len() {
                if s.col_pos[j] != NONBASIC || j == q {
                    continue;
                }
                let mut alpha = 0.0;
                for &r in &self.col_rows[j * n..(j + 1) * n] {
                    if r != DROPPED {
                        alpha += rho[r as usize];
                    }
                }
                if alpha != 0.0 {
                    let ratio = alpha / alpha_q;
                    let w = &mut s.weights[j];
                    *w = w.max(ratio * ratio * w_q);
                    overflow |= *w > DEVEX_RESET;
                }
            }
            if let Var::Col(l) = s.basis[p] {
                s.weights[l] = (w_q / (alpha_q * alpha_q)).max(1.0);
            }
            if overflow {
                s.weights.iter_mut().for_each(|w| *w = 1.0);
            }

            for (i, xi) in s.x.iter_mut().enumerate() {
                if d[i] != 0.0 {
                    *xi -= theta * d[i];
                }
            }
            for i in 0..self.m {
                if s.x[i] < 0.0 || (s.phase_two && matches!(s.basis[i], Var::Art(_))) {
                    s.x[i] = 0.0;
                }
            }
            s.x[p] = theta;
            if let Var::Col(j) = s.basis[p] {
                s.col_pos[j] = NONBASIC;
            }
            s.basis[p] = Var::Col(q);
            s.col_pos[q] = p as u32;
            s.factor.push_eta(p, &d);
            *pivots += 1;

            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run >= tol.bland_after {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
            if s.factor.eta_count() >= tol.refactor_interval
                || self.primal_residual(s) > tol.drift
            {
                self.refactor(s)?;
            } else {
                duals = Some(y);
            }
        }
    }

    fn extract(&self, s: &Simplex, status: LpStatus, pivots: usize) -> LpSolution {
        let mut plan = SparsePlan::new(self.shape.clone());
        let mut obj_terms = Vec::new();
        for (&v, &x) in s.basis.iter().zip(&s.x) {
            if let Var::Col(j) = v {
                if x > self.tol.zero_mass {
                    plan.add(self.columns[j].clone(), x)
                        .expect("basic column within bounds");
                    obj_terms.push(self.costs[j] * x);
                }
            }
        }
        let c_b: Vec<f64> = s.basis.iter().map(|&v| self.var_cost(v, false)).collect();
        let y = s.factor.btran(&c_b);
        let u = self
            .shape
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                (0..l)
                    .map(|i| match self.row_of(k, i) {
                        DROPPED => 0.0,
                        r => y[r as usize],
                    })
                    .collect()
            })
            .collect();
        LpSolution {
            status,
            plan,
            potentials: DualPotentials { u },
            objective: kahan_sum(obj_terms),
            basis: Some(self.describe(s)),
            pivots,
        }
    }

    /// Masses of the marginals this problem was built from.
    pub fn masses(&self) -> &[Vec<f64>] {
        &self.masses
    }
}

fn var_order(v: Var) -> (u8, usize) {
    match v {
        Var::Col(j) => (0, j),
        Var::Art(r) => (1, r),
    }
}

/// Primal and dual values returned by an [`LpBackend`].
#[derive(Debug, Clone)]
pub struct BackendSolution {
    pub status: LpStatus,
    /// One value per submitted column.
    pub primal: Vec<f64>,
    pub duals: DualPotentials,
    pub objective: f64,
}

/// An external LP solver for the reduced problem, used for cross-checks.
pub trait LpBackend {
    fn solve_columns(
        &mut self,
        masses: &[Vec<f64>],
        columns: &[Configuration],
        costs: &[f64],
    ) -> Result<BackendSolution>;
}

/// The built-in simplex behind the backend interface.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimplexBackend {
    pub tolerances: Tolerances,
}

impl LpBackend for SimplexBackend {
    fn solve_columns(
        &mut self,
        masses: &[Vec<f64>],
        columns: &[Configuration],
        costs: &[f64],
    ) -> Result<BackendSolution> {
        let mut lp = ReducedLp::from_masses(masses.to_vec(), self.tolerances)?;
        for (c, &cost) in columns.iter().zip(costs) {
            lp.add_column(c.clone(), cost)?;
        }
        let sol = lp.solve(None)?;
        Ok(BackendSolution {
            status: sol.status,
            primal: columns.iter().map(|c| sol.plan.mass(c)).collect(),
            duals: sol.potentials,
            objective: sol.objective,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{marginal_residuals, sparsity_bound};

    fn line(masses: &[f64]) -> Marginal {
        let n = masses.len();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n.max(2) - 1) as f64).collect();
        Marginal::on_line(&xs, masses.to_vec()).unwrap()
    }

    fn all_configs(shape: &[usize]) -> Vec<Configuration> {
        let mut out = vec![Vec::new()];
        for &l in shape {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (0..l).map(move |i| {
                        let mut q = p.clone();
                        q.push(i);
                        q
                    })
                })
                .collect();
        }
        out.into_iter().map(Configuration::new).collect()
    }

    fn check_certificates(lp: &ReducedLp, sol: &LpSolution, marginals: &[Marginal]) {
        assert_eq!(sol.status, LpStatus::Optimal);
        let res = marginal_residuals(&sol.plan, marginals).unwrap();
        assert!(res.iter().flatten().all(|r| r.abs() <= 1e-9));
        for c in lp.columns() {
            let v = dual_violation(&sol.potentials, c, lp.cost_of(c).unwrap());
            assert!(v <= 1e-9, "dual infeasible at {c:?}: {v}");
            if sol.plan.contains(c) {
                assert!(v.abs() <= 1e-8);
            }
        }
        let dual = sol.potentials.dual_objective(marginals);
        assert!((dual - sol.objective).abs() <= 1e-8 * (1.0 + sol.objective.abs()));
        assert!(sol.plan.len() <= sparsity_bound(lp.shape()));
    }

    #[test]
    fn dirac_pair_single_column() {
        let ms = vec![Marginal::dirac(vec![0.0]), Marginal::dirac(vec![2.0])];
        let mut lp = ReducedLp::new(&ms).unwrap();
        assert_eq!(lp.rows(), 1);
        lp.add_column([0, 0].into(), 4.0).unwrap();
        let sol = lp.solve(None).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective, 4.0);
        assert_eq!(sol.plan.mass(&[0, 0].into()), 1.0);
        check_certificates(&lp, &sol, &ms);
    }

    #[test]
    fn full_product_three_marginals() {
        let ms = vec![
            line(&[0.1, 0.2, 0.3, 0.4]),
            line(&[0.25, 0.25, 0.25, 0.25]),
            line(&[0.4, 0.1, 0.1, 0.4]),
        ];
        let mut lp = ReducedLp::new(&ms).unwrap();
        assert_eq!(lp.rows(), sparsity_bound(&[4, 4, 4]));
        for c in all_configs(&[4, 4, 4]) {
            let cost = ((c.get(0) * 7 + c.get(1) * 3 + c.get(2) * 5) % 11) as f64 / 11.0;
            lp.add_column(c, cost).unwrap();
        }
        let sol = lp.solve(None).unwrap();
        check_certificates(&lp, &sol, &ms);
    }

    #[test]
    fn infeasible_support_is_detected() {
        let ms = vec![line(&[0.5, 0.5]), line(&[0.5, 0.5])];
        let mut lp = ReducedLp::new(&ms).unwrap();
        lp.add_column([0, 0].into(), 0.0).unwrap();
        lp.add_column([0, 1].into(), 0.0).unwrap();
        let sol = lp.solve(None).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn duplicate_and_unknown_columns_rejected() {
        let ms = vec![line(&[0.5, 0.5]), line(&[0.5, 0.5])];
        let mut lp = ReducedLp::new(&ms).unwrap();
        lp.add_column([0, 0].into(), 0.0).unwrap();
        assert_eq!(lp.len(), 1);
        assert!(matches!(
            lp.add_column([0, 0].into(), 1.0),
            Err(Error::DuplicateColumn(_))
        ));
        assert!(matches!(
            lp.remove_columns(&[Configuration::from([1, 0])]),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn warm_start_after_insertion_matches_cold() {
        let ms = vec![line(&[0.2, 0.3, 0.5]), line(&[0.5, 0.3, 0.2])];
        let cost = |c: &Configuration| {
            let d = c.get(0) as f64 - c.get(1) as f64;
            d * d
        };
        let mut lp = ReducedLp::new(&ms).unwrap();
        for c in [[0, 2], [1, 1], [2, 0], [0, 0], [2, 2]] {
            let c = Configuration::from(c);
            lp.add_column(c.clone(), cost(&c)).unwrap();
        }
        let first = lp.solve(None).unwrap();
        check_certificates(&lp, &first, &ms);
        let extra = all_configs(&[3, 3])
            .into_iter()
            .filter(|c| !lp.contains(c))
            .max_by(|a, b| {
                let va = dual_violation(&first.potentials, a, cost(a));
                let vb = dual_violation(&first.potentials, b, cost(b));
                va.total_cmp(&vb)
            })
            .unwrap();
        assert!(dual_violation(&first.potentials, &extra, cost(&extra)) > 0.0);
        lp.add_column(extra.clone(), cost(&extra)).unwrap();
        let warm = lp.solve(first.basis.as_ref()).unwrap();
        check_certificates(&lp, &warm, &ms);
        assert!(warm.objective <= first.objective + 1e-12);
        let cold = lp.clone().solve(None).unwrap();
        assert!((cold.objective - warm.objective).abs() <= 1e-9);
    }

    #[test]
    fn remove_nonbasic_keeps_objective_and_basic_is_protected() {
        let ms = vec![line(&[0.2, 0.3, 0.5]), line(&[0.5, 0.3, 0.2])];
        let mut lp = ReducedLp::new(&ms).unwrap();
        for c in all_configs(&[3, 3]) {
            let d = c.get(0) as f64 - c.get(1) as f64;
            lp.add_column(c, d * d).unwrap();
        }
        let sol = lp.solve(None).unwrap();
        lp.remove_columns(std::iter::empty()).unwrap();
        assert_eq!(lp.len(), 9);
        let basic: Vec<_> = sol.basis.as_ref().unwrap().columns().cloned().collect();
        assert!(matches!(
            lp.remove_columns(&basic[..1]),
            Err(Error::ActiveColumn(_))
        ));
        let inactive: Vec<_> = lp
            .columns()
            .iter()
            .filter(|c| !lp.is_basic(c))
            .cloned()
            .collect();
        lp.remove_columns(&inactive).unwrap();
        let again = lp.solve(sol.basis.as_ref()).unwrap();
        assert!((again.objective - sol.objective).abs() <= 1e-12);
        check_certificates(&lp, &again, &ms);
    }

    #[test]
    fn descriptor_from_other_instance_is_refactorized() {
        let ms = vec![line(&[0.2, 0.3, 0.5]), line(&[0.5, 0.3, 0.2])];
        let mut a = ReducedLp::new(&ms).unwrap();
        for c in all_configs(&[3, 3]) {
            let d = c.get(0) as f64 - c.get(1) as f64;
            a.add_column(c, d * d).unwrap();
        }
        let mut b = a.clone();
        let sa = a.solve(None).unwrap();
        b.state = None;
        let sb = b.solve(sa.basis.as_ref()).unwrap();
        assert_eq!(sb.pivots, 0);
        assert!((sa.objective - sb.objective).abs() < 1e-14);
    }
}
