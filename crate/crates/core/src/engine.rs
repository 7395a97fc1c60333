//! Genetic column generation.
//!
//! The working set Ω is grown by mutating configurations of the current
//! optimal plan in one coordinate and keeping a child only when it violates
//! the current dual constraint. The reduced problem is re-solved warm after
//! every accepted child, and the oldest inactive columns are dropped once Ω
//! outgrows `β·Σℓ_k`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::costs::{CostEvaluator, CostSpec};
use crate::error::{Error, Result};
use crate::init::{InitResult, ProductIter, DEFAULT_BETA};
use crate::lp::{dual_violation, LpSolution, LpStatus, ReducedLp, Tolerances};
use crate::measures::{product_size, shape_of, sparsity_bound, Configuration, Marginal, ReducedSet};

/// Product sizes up to this are certified by a full scan.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Number of one-coordinate children of a plan with the largest sparse
/// support, `(Σ(ℓ_k − 1) + 1)·Σ(ℓ_k − 1)`. A stall budget a few times this
/// lets the search revisit most of the neighborhood before giving up.
pub fn neighborhood_size(shape: &[usize]) -> usize {
    let moves: usize = shape.iter().map(|l| l - 1).sum();
    sparsity_bound(shape) * moves
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResolvePolicy {
    /// Re-solve after every accepted child.
    EachAccept,
    /// Collect this many accepted children per re-solve.
    Batch(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct GenColConfig {
    pub beta: f64,
    /// Consecutive rejected proposals before stopping; `None` means `10·Σℓ_k`.
    pub max_stall: Option<usize>,
    pub seed: u64,
    /// Index-space radius for the replaced coordinate; `None` is uniform.
    pub locality: Option<usize>,
    pub resolve: ResolvePolicy,
    /// Draw parents proportionally to their mass instead of uniformly.
    pub mass_weighted_parent: bool,
    /// Smallest dual violation that admits a child.
    pub acceptance_tol: f64,
    /// Stop after this many re-solves even without stalling.
    pub max_solves: Option<usize>,
    #[serde(skip)]
    pub tolerances: Tolerances,
}

impl Default for GenColConfig {
    fn default() -> Self {
        GenColConfig {
            beta: DEFAULT_BETA,
            max_stall: None,
            seed: 0,
            locality: None,
            resolve: ResolvePolicy::EachAccept,
            mass_weighted_parent: false,
            acceptance_tol: 1e-10,
            max_solves: None,
            tolerances: Tolerances::default(),
        }
    }
}

impl GenColConfig {
    pub fn with_seed(seed: u64) -> Self {
        GenColConfig {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must exceed 1, got {}",
                self.beta
            )));
        }
        if self.max_stall == Some(0) {
            return Err(Error::InvalidParameter("max_stall must be at least 1".into()));
        }
        if let ResolvePolicy::Batch(0) = self.resolve {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One record per solve of the reduced problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    pub omega: usize,
    pub support: usize,
    pub objective: f64,
    pub accepted: usize,
}

impl HistoryPoint {
    pub const CSV_HEADER: &'static str = "iteration,omega,support,objective,accepted";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:e},{}",
            self.iteration, self.omega, self.support, self.objective, self.accepted
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// `max_stall` consecutive proposals were rejected.
    Stalled,
    /// The re-solve budget ran out.
    SolveLimit,
}

/// Result of a dual feasibility scan over the product grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub exhaustive: bool,
    pub checked: u64,
    pub violations: u64,
    pub max_violation: f64,
    pub worst: Option<Vec<usize>>,
    pub tolerance: f64,
}

impl Certificate {
    /// No violation on the whole grid: the reduced optimum is global.
    pub fn is_exact_optimum(&self) -> bool {
        self.exhaustive && self.violations == 0
    }
}

pub struct GenColState<'a> {
    marginals: &'a [Marginal],
    evaluator: CostEvaluator<'a>,
    config: GenColConfig,
    shape: Vec<usize>,
    max_stall: usize,
    lp: ReducedLp,
    pub omega: ReducedSet,
    pub solution: LpSolution,
    rng: ChaCha8Rng,
    parents: Vec<(Configuration, f64)>,
    pub iteration: usize,
    pub proposals: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub stall: usize,
    pub removed: usize,
    pub peak_omega: usize,
    pub history: Vec<HistoryPoint>,
    progress: Option<Box<dyn Write + 'a>>,
}

impl<'a> GenColState<'a> {
    /// Builds the reduced problem on the initial set and solves it.
    pub fn new(
        marginals: &'a [Marginal],
        spec: &'a CostSpec,
        config: GenColConfig,
        init: InitResult,
    ) -> Result<Self> {
        config.validate()?;
        let shape = shape_of(marginals);
        if init.plan.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(
                "initial plan does not match the marginals".into(),
            ));
        }
        let total: usize = shape.iter().sum();
        let capacity = ReducedSet::capacity_for(config.beta, &shape);
        let evaluator = CostEvaluator::new(spec, marginals)?.with_cache(4 * capacity);
        let mut omega = init.omega;
        omega.set_capacity(capacity);
        let mut lp = ReducedLp::with_tolerances(marginals, config.tolerances)?;
        for c in omega.oldest_first() {
            lp.add_column(c.clone(), evaluator.eval(c)?)?;
        }
        for (c, _) in init.plan.iter() {
            if !lp.contains(c) {
                omega.insert(c.clone());
                lp.add_column(c.clone(), evaluator.eval(c)?)?;
            }
        }
        lp.set_crash_seed(init.plan.iter().map(|(c, _)| c.clone()));
        let solution = lp.solve(None)?;
        match solution.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::IterationLimit => return Err(Error::IterationLimit(solution.pivots)),
        }
        let mut state = GenColState {
            marginals,
            evaluator,
            max_stall: config.max_stall.unwrap_or(10 * total),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            shape,
            lp,
            peak_omega: omega.len(),
            omega,
            solution,
            parents: Vec::new(),
            iteration: 0,
            proposals: 0,
            accepted: 0,
            rejected: 0,
            stall: 0,
            removed: 0,
            history: Vec::new(),
            progress: None,
        };
        state.after_solve()?;
        Ok(state)
    }

    /// Streams one CSV record per solve, starting with the current one.
    pub fn set_progress(&mut self, mut w: Box<dyn Write + 'a>) -> Result<()> {
        writeln!(w, "{}", HistoryPoint::CSV_HEADER)?;
        for h in &self.history {
            writeln!(w, "{}", h.csv_line())?;
        }
        self.progress = Some(w);
        Ok(())
    }

    pub fn config(&self) -> &GenColConfig {
        &self.config
    }

    pub fn marginals(&self) -> &[Marginal] {
        self.marginals
    }

    pub fn max_stall(&self) -> usize {
        self.max_stall
    }

    pub fn cost(&self, r: &Configuration) -> Result<f64> {
        self.evaluator.eval(r)
    }

    fn after_solve(&mut self) -> Result<()> {
        self.parents = self
            .solution
            .plan
            .iter()
            .map(|(c, m)| (c.clone(), m))
            .collect();
        let point = HistoryPoint {
            iteration: self.iteration,
            omega: self.omega.len(),
            support: self.parents.len(),
            objective: self.solution.objective,
            accepted: self.accepted,
        };
        if let Some(w) = &mut self.progress {
            writeln!(w, "{}", point.csv_line())?;
        }
        self.history.push(point);
        self.peak_omega = self.peak_omega.max(self.omega.len());
        Ok(())
    }

    /// Mutates one coordinate of a random support configuration. Returns
    /// `None` when the child is already in Ω or no replacement exists.
    pub fn propose_child(&mut self) -> Result<Option<Configuration>> {
        if self.parents.is_empty() {
            return Err(Error::EmptySupport);
        }
        let parent = if self.config.mass_weighted_parent {
            let mut t = self.rng.gen::<f64>();
            let mut pick = self.parents.len() - 1;
            for (i, (_, m)) in self.parents.iter().enumerate() {
                if t < *m {
                    pick = i;
                    break;
                }
                t -= m;
            }
            &self.parents[pick].0
        } else {
            &self.parents[self.rng.gen_range(0..self.parents.len())].0
        };
        let k = self.rng.gen_range(0..self.shape.len());
        let l = self.shape[k];
        let cur = parent.get(k);
        let (lo, hi) = match self.config.locality {
            Some(rad) => (cur.saturating_sub(rad), (cur + rad).min(l - 1)),
            None => (0, l - 1),
        };
        if hi == lo {
            return Ok(None);
        }
        let mut v = self.rng.gen_range(lo..hi);
        if v >= cur {
            v += 1;
        }
        let child = parent.with(k, v);
        Ok((!self.omega.contains(&child)).then_some(child))
    }

    /// Whether `r` violates the current dual constraint.
    pub fn accept(&self, r: &Configuration, cost: f64) -> bool {
        dual_violation(&self.solution.potentials, r, cost) > self.config.acceptance_tol
    }

    /// Drops up to `Σℓ_k` of the oldest nonbasic members when Ω exceeds its
    /// capacity; `keep` is never removed. Returns the number removed.
    pub fn tail_clear(&mut self, keep: &[Configuration]) -> Result<usize> {
        if !self.omega.over_capacity() {
            return Ok(0);
        }
        let quota: usize = self.shape.iter().sum();
        let victims: Vec<Configuration> = self
            .omega
            .oldest_first()
            .filter(|c| !self.lp.is_basic(c) && !keep.contains(c))
            .take(quota)
            .cloned()
            .collect();
        if victims.is_empty() {
            log::debug!("tail clear: every member of the working set is active");
        }
        self.lp.remove_columns(&victims)?;
        for c in &victims {
            self.omega.remove(c);
        }
        self.removed += victims.len();
        Ok(victims.len())
    }

    /// Searches for violating children with the current potentials. Returns
    /// them once enough are found, or an empty list on stall.
    fn search(&mut self) -> Result<Vec<(Configuration, f64)>> {
        let want = match self.config.resolve {
            ResolvePolicy::EachAccept => 1,
            ResolvePolicy::Batch(m) => m,
        };
        let mut found: Vec<(Configuration, f64)> = Vec::new();
        while self.stall < self.max_stall {
            self.proposals += 1;
            let child = match self.propose_child()? {
                Some(c) if !found.iter().any(|(f, _)| *f == c) => c,
                _ => {
                    self.rejected += 1;
                    self.stall += 1;
                    continue;
                }
            };
            let cost = self.evaluator.eval(&child)?;
            if self.accept(&child, cost) {
                self.stall = 0;
                found.push((child, cost));
                if found.len() >= want {
                    break;
                }
            } else {
                self.rejected += 1;
                self.stall += 1;
            }
        }
        Ok(found)
    }

    /// One cycle: search, insert, clear, re-solve. Returns false on stall.
    pub fn step(&mut self) -> Result<bool> {
        let children = self.search()?;
        if children.is_empty() {
            return Ok(false);
        }
        let keep: Vec<Configuration> = children.iter().map(|(c, _)| c.clone()).collect();
        for (c, cost) in children {
            self.omega.insert(c.clone());
            self.lp.add_column(c, cost)?;
            self.accepted += 1;
        }
        self.peak_omega = self.peak_omega.max(self.omega.len());
        self.tail_clear(&keep)?;
        let warm = self.solution.basis.take();
        let solution = self.lp.solve(warm.as_ref())?;
        match solution.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::IterationLimit => return Err(Error::IterationLimit(solution.pivots)),
        }
        self.solution = solution;
        self.iteration += 1;
        self.after_solve()?;
        Ok(true)
    }

    /// Runs until stall or the solve budget is exhausted.
    pub fn run_to_end(&mut self) -> Result<Termination> {
        loop {
            if let Some(cap) = self.config.max_solves {
                if self.iteration >= cap {
                    return Ok(Termination::SolveLimit);
                }
            }
            if !self.step()? {
                return Ok(Termination::Stalled);
            }
        }
    }

    /// Scans the product grid for dual violations; exhaustive on grids of
    /// at most [`EXHAUSTIVE_LIMIT`] configurations, otherwise `budget`
    /// uniform samples.
    pub fn certify(&self, budget: u64, tolerance: f64) -> Result<Certificate> {
        let total = product_size(&self.shape);
        let mut cert = Certificate {
            exhaustive: total <= EXHAUSTIVE_LIMIT,
            checked: 0,
            violations: 0,
            max_violation: f64::NEG_INFINITY,
            worst: None,
            tolerance,
        };
        let visit = |c: Configuration, cert: &mut Certificate| -> Result<()> {
            let cost = crate::costs::eval_cost(self.evaluator.spec(), &c, self.marginals)?;
            let v = dual_violation(&self.solution.potentials, &c, cost);
            cert.checked += 1;
            if v > tolerance {
                cert.violations += 1;
            }
            if v > cert.max_violation {
                cert.max_violation = v;
                cert.worst = Some(c.indices().collect());
            }
            Ok(())
        };
        if cert.exhaustive {
            for c in ProductIter::new(&self.shape) {
                visit(c, &mut cert)?;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_cafe);
            for _ in 0..budget {
                let c = Configuration::new(self.shape.iter().map(|&l| rng.gen_range(0..l)));
                visit(c, &mut cert)?;
            }
        }
        Ok(cert)
    }
}

/// Runs genetic column generation from `init` to termination.
pub fn run<'a>(
    marginals: &'a [Marginal],
    spec: &'a CostSpec,
    config: GenColConfig,
    init: InitResult,
) -> Result<(GenColState<'a>, Termination)> {
    let mut state = GenColState::new(marginals, spec, config, init)?;
    let term = state.run_to_end()?;
    Ok((state, term))
}
