use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gencol::baselines::{
    ibp_barycenter, sinkhorn_2m, CostMatrix, SinkhornMode, SinkhornParams,
};
use gencol::costs::CostSpec;
use gencol::engine::{neighborhood_size, Certificate, GenColConfig, GenColState, Termination};
use gencol::extract::{
    barycenter_pushforward, gaussian_blur, rasterize, smooth_threshold, spline_path, GridSpec,
    MERGE_TOLERANCE,
};
use gencol::init::{augment_random, nw_corner, reflection_init, InitResult, NwOrder};
use gencol::instances::{gaussian_spline_series, reflected_pair};
use gencol::io::{
    write_cloud, write_grid, write_mask, write_plan, write_potentials, write_run_record,
    RunRecord,
};
use gencol::measures::{max_residual, shape_of, sparsity_bound, Marginal};
use gencol::Error;

use crate::{inputs, Common, InputArgs, Order};

/// Plans whose marginals are off by more than this fail `nwcorner`.
const FEASIBILITY_TOL: f64 = 1e-12;

pub enum Outcome {
    Success,
    Infeasible,
    Uncertified,
}

impl From<Outcome> for std::process::ExitCode {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Success => 0.into(),
            Outcome::Infeasible => 3.into(),
            Outcome::Uncertified => 4.into(),
        }
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<clap::Error>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Infeasible) => 3,
        Some(Error::IterationLimit(_)) => 4,
        Some(Error::Numerical(_)) | Some(Error::Json(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

pub struct CostArgs {
    pub name: String,
    pub weights: Vec<f64>,
    pub times: Vec<f64>,
    pub step: Option<f64>,
}

pub struct RasterArgs {
    pub refine: usize,
    pub grid: String,
    pub blur: Option<(f64, f64)>,
}

fn equidistant(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect()
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn cost_spec(args: &CostArgs, marginals: &[Marginal]) -> Result<CostSpec> {
    let n = marginals.len();
    let spec = match args.name.as_str() {
        "quadratic" => CostSpec::Quadratic2M,
        "barycenter" => {
            let w = if args.weights.is_empty() { uniform(n) } else { args.weights.clone() };
            CostSpec::barycenter(w)?
        }
        "spline" => {
            let t = if args.times.is_empty() { equidistant(n) } else { args.times.clone() };
            CostSpec::spline_exact(t)?
        }
        "spline-approx" => CostSpec::spline_approx(args.step.unwrap_or(1.0 / (n.max(2) - 1) as f64))?,
        other => match other.strip_prefix("table:") {
            Some(path) => inputs::cost_table(Path::new(path), &shape_of(marginals))?,
            None => bail!(Error::InvalidParameter(format!("unknown cost {other:?}"))),
        },
    };
    spec.check_arity(n)?;
    Ok(spec)
}

fn config(common: &Common) -> GenColConfig {
    GenColConfig {
        beta: common.beta,
        max_stall: common.max_stall,
        max_solves: common.max_solves,
        acceptance_tol: common.tol,
        ..GenColConfig::with_seed(common.seed)
    }
}

fn nw_order(order: Order) -> NwOrder {
    match order {
        Order::Stored => NwOrder::Stored,
        Order::Lex => NwOrder::Lexicographic,
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs the engine to termination, streaming progress when asked.
fn drive<'a>(
    common: &Common,
    dir: &Path,
    marginals: &'a [Marginal],
    spec: &'a CostSpec,
    config: GenColConfig,
    init: InitResult,
) -> Result<(GenColState<'a>, Termination)> {
    let mut state = GenColState::new(marginals, spec, config, init)?;
    if common.progress {
        let file = File::create(dir.join("progress.csv"))?;
        state.set_progress(Box::new(BufWriter::new(file)))?;
    }
    let term = state.run_to_end()?;
    Ok((state, term))
}

fn record(
    command: &str,
    spec: &CostSpec,
    state: &GenColState,
    term: Termination,
    cert: Option<&Certificate>,
    started: Instant,
) -> RunRecord {
    let config = state.config();
    let shape = shape_of(state.marginals());
    RunRecord {
        command: command.into(),
        seed: config.seed,
        beta: config.beta,
        max_stall: state.max_stall(),
        acceptance_tol: config.acceptance_tol,
        locality: config.locality,
        resolve: format!("{:?}", config.resolve),
        cost: format!("{spec:?}"),
        objective: state.solution.objective,
        support_size: state.solution.plan.len(),
        sparsity_bound: sparsity_bound(&shape),
        shape,
        peak_omega: state.peak_omega,
        iterations: state.iteration,
        proposals: state.proposals,
        accepted: state.accepted,
        rejected: state.rejected,
        termination: format!("{term:?}"),
        certificate_exhaustive: cert.map(|c| c.exhaustive),
        certificate_checked: cert.map(|c| c.checked),
        certificate_violations: cert.map(|c| c.violations),
        certificate_max_violation: cert.map(|c| c.max_violation),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        cost_history: state.history.iter().map(|h| (h.iteration, h.objective)).collect(),
        ..RunRecord::default()
    }
}

fn write_solution(dir: &Path, state: &GenColState) -> Result<()> {
    write_plan(dir.join("plan.csv"), &state.solution.plan)?;
    write_potentials(dir.join("potentials.csv"), &state.solution.potentials)?;
    let mut history = format!("{}\n", gencol::engine::HistoryPoint::CSV_HEADER);
    for h in &state.history {
        history.push_str(&h.csv_line());
        history.push('\n');
    }
    fs::write(dir.join("history.csv"), history)?;
    Ok(())
}

fn report(state: &GenColState, term: Termination) {
    println!(
        "objective {:.16e}  support {}  iterations {}  termination {term:?}",
        state.solution.objective,
        state.solution.plan.len(),
        state.iteration
    );
}

pub fn solve(
    common: &Common,
    input: &InputArgs,
    cost: &CostArgs,
    order: Order,
    certify: Option<u64>,
    command: &str,
) -> Result<Outcome> {
    let started = Instant::now();
    let marginals = inputs::load(input)?;
    inputs::require(&marginals, 2, command)?;
    let spec = cost_spec(cost, &marginals)?;
    let dir = &common.out_dir;
    prepare_dir(dir)?;
    let init = nw_corner(&marginals, &nw_order(order))?;
    let (state, term) = drive(common, dir, &marginals, &spec, config(common), init)?;
    let cert = certify.map(|budget| state.certify(budget, common.tol)).transpose()?;
    write_solution(dir, &state)?;
    write_run_record(dir.join("run.json"), &record(command, &spec, &state, term, cert.as_ref(), started))?;
    report(&state, term);
    Ok(match cert {
        Some(c) => {
            let kind = if c.exhaustive { "exhaustive" } else { "sampled" };
            println!(
                "{kind} scan of {} configurations: {} violations, max violation {:.3e}",
                c.checked, c.violations, c.max_violation
            );
            if c.violations == 0 {
                println!("{}", if c.exhaustive { "exact optimum" } else { "no violation found" });
                Outcome::Success
            } else {
                Outcome::Uncertified
            }
        }
        None if term == Termination::SolveLimit => Outcome::Uncertified,
        None => Outcome::Success,
    })
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
        .filter(|&(w, h): &(usize, usize)| w > 0 && h > 0);
    match parsed {
        Some(wh) => Ok(wh),
        None => bail!(Error::InvalidParameter(format!("grid must look like 28x28, got {s:?}"))),
    }
}

/// All weight vectors with entries in `{0, 1/steps, …, 1}` summing to one.
fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![steps]];
    }
    (0..=steps)
        .rev()
        .flat_map(|first| {
            simplex_grid(n - 1, steps - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

pub fn barycenter(
    common: &Common,
    input: &InputArgs,
    weights: Vec<f64>,
    weight_grid: Option<usize>,
    raster: &RasterArgs,
) -> Result<Outcome> {
    let marginals = inputs::load(input)?;
    inputs::require(&marginals, 2, "barycenter")?;
    let n = marginals.len();
    let (width, height) = parse_grid(&raster.grid)?;
    prepare_dir(&common.out_dir)?;
    let runs: Vec<(Vec<f64>, std::path::PathBuf)> = match weight_grid {
        Some(0) => bail!(Error::InvalidParameter("weight grid needs at least one step".into())),
        Some(steps) => simplex_grid(n, steps)
            .into_iter()
            .map(|parts| {
                let name: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                let w = parts.iter().map(|&p| p as f64 / steps as f64).collect();
                (w, common.out_dir.join(format!("w_{}", name.join("_"))))
            })
            .collect(),
        None if weights.is_empty() => vec![(uniform(n), common.out_dir.clone())],
        None => vec![(weights, common.out_dir.clone())],
    };
    let mut outcome = Outcome::Success;
    for (w, dir) in runs {
        let started = Instant::now();
        prepare_dir(&dir)?;
        let spec = CostSpec::barycenter(w.clone())?;
        spec.check_arity(n)?;
        let init = nw_corner(&marginals, &NwOrder::Lexicographic)?;
        let (state, term) = drive(common, &dir, &marginals, &spec, config(common), init)?;
        let cloud = barycenter_pushforward(&state.solution.plan, &marginals, &w, MERGE_TOLERANCE)?;
        write_solution(&dir, &state)?;
        write_cloud(dir.join("barycenter.csv"), &cloud)?;
        if raster.refine > 0 {
            let grid = rasterize(&cloud, &GridSpec::refined_unit_square(width, height, raster.refine))?;
            write_grid(dir.join("barycenter.pgm"), &grid)?;
            if let Some((sigma, level)) = raster.blur {
                let peak = gaussian_blur(&grid, sigma).into_iter().fold(0.0f64, f64::max);
                let mask = smooth_threshold(&grid, sigma, level * peak);
                write_mask(dir.join("mask.pgm"), &mask)?;
            }
        }
        let mut rec = record("barycenter", &spec, &state, term, None, started);
        rec.extra.insert("cloud_points".into(), cloud.len().to_string());
        write_run_record(dir.join("run.json"), &rec)?;
        println!("{}: {} cloud points", dir.display(), cloud.len());
        report(&state, term);
        if term == Termination::SolveLimit {
            outcome = Outcome::Uncertified;
        }
    }
    Ok(outcome)
}

pub fn spline(
    common: &Common,
    input: &InputArgs,
    times: Vec<f64>,
    query: Vec<f64>,
    frames: usize,
    approx: bool,
) -> Result<Outcome> {
    let started = Instant::now();
    let mut marginals = inputs::load(input)?;
    let mut times = times;
    if marginals.is_empty() {
        let (ms, t) = gaussian_spline_series();
        marginals = ms;
        if times.is_empty() {
            times = t;
        }
    }
    inputs::require(&marginals, 3, "spline")?;
    if times.is_empty() {
        times = equidistant(marginals.len());
    }
    let query = if query.is_empty() { equidistant(frames.max(2)) } else { query };
    let spec = if approx {
        let n = marginals.len();
        CostSpec::spline_approx(1.0 / (n - 1) as f64)?
    } else {
        CostSpec::spline_exact(times.clone())?
    };
    spec.check_arity(marginals.len())?;
    let dir = &common.out_dir;
    prepare_dir(dir)?;
    let init = nw_corner(&marginals, &NwOrder::Lexicographic)?;
    let (state, term) = drive(common, dir, &marginals, &spec, config(common), init)?;
    let path = spline_path(&state.solution.plan, &marginals, &times, &query, MERGE_TOLERANCE)?;
    write_solution(dir, &state)?;
    for (i, cloud) in path.clouds.iter().enumerate() {
        write_cloud(dir.join(format!("frame_{i:03}.csv")), cloud)?;
    }
    let mut rec = record("spline", &spec, &state, term, None, started);
    let q: Vec<String> = query.iter().map(|t| format!("{t:e}")).collect();
    rec.extra.insert("query_times".into(), q.join(","));
    write_run_record(dir.join("run.json"), &rec)?;
    report(&state, term);
    Ok(if term == Termination::SolveLimit { Outcome::Uncertified } else { Outcome::Success })
}

pub fn nwcorner(common: &Common, input: &InputArgs, order: Order) -> Result<Outcome> {
    let started = Instant::now();
    let marginals = inputs::load(input)?;
    inputs::require(&marginals, 2, "nwcorner")?;
    let dir = &common.out_dir;
    prepare_dir(dir)?;
    let init = nw_corner(&marginals, &nw_order(order))?;
    let residual = max_residual(&init.plan, &marginals)?;
    let shape = shape_of(&marginals);
    write_plan(dir.join("plan.csv"), &init.plan)?;
    let mut trace = String::from("step,configuration,mass\n");
    for (step, (c, m)) in init.trace.iter().enumerate() {
        let idx: Vec<String> = c.indices().map(|i| i.to_string()).collect();
        trace.push_str(&format!("{step},{},{m:.17e}\n", idx.join(" ")));
    }
    fs::write(dir.join("trace.csv"), trace)?;
    let feasible = residual <= FEASIBILITY_TOL;
    let mut rec = RunRecord {
        command: "nwcorner".into(),
        seed: common.seed,
        support_size: init.plan.len(),
        sparsity_bound: sparsity_bound(&shape),
        shape,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        ..RunRecord::default()
    };
    rec.extra.insert("max_residual".into(), format!("{residual:e}"));
    rec.extra.insert("feasible".into(), feasible.to_string());
    write_run_record(dir.join("run.json"), &rec)?;
    println!(
        "support {} (bound {})  max residual {residual:.3e}",
        init.plan.len(),
        rec.sparsity_bound
    );
    Ok(if feasible { Outcome::Success } else { Outcome::Infeasible })
}

pub fn entropic_params(epsilon: f64, max_iter: usize, kernel: bool) -> SinkhornParams {
    SinkhornParams {
        epsilon,
        max_iter,
        mode: if kernel { SinkhornMode::Kernel } else { SinkhornMode::LogDomain },
        ..SinkhornParams::default()
    }
}

/// Union of all supports in lexicographic order, with each measure's masses
/// spread onto it.
fn common_support(marginals: &[Marginal]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut support: Vec<Vec<f64>> = marginals.iter().flat_map(|m| m.points().to_vec()).collect();
    support.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    support.dedup();
    let masses = marginals
        .iter()
        .map(|m| {
            let mut w = vec![0.0; support.len()];
            for (p, &mass) in m.points().iter().zip(m.masses()) {
                let i = support
                    .binary_search_by(|s| s.partial_cmp(p).expect("finite coordinates"))
                    .expect("point is in the union");
                w[i] += mass;
            }
            w
        })
        .collect();
    (support, masses)
}

pub fn sinkhorn(
    common: &Common,
    input: &InputArgs,
    params: SinkhornParams,
    barycenter: bool,
    weights: Vec<f64>,
) -> Result<Outcome> {
    let started = Instant::now();
    let mut marginals = inputs::load(input)?;
    if marginals.is_empty() {
        let (a, b) = reflected_pair(100);
        marginals = vec![a, b];
    }
    let dir = &common.out_dir;
    prepare_dir(dir)?;
    let mut rec = RunRecord {
        command: "sinkhorn".into(),
        shape: shape_of(&marginals),
        ..RunRecord::default()
    };
    rec.extra.insert("epsilon".into(), format!("{:e}", params.epsilon));
    let converged = if barycenter {
        inputs::require(&marginals, 2, "sinkhorn --barycenter")?;
        let w = if weights.is_empty() { uniform(marginals.len()) } else { weights };
        let (support, masses) = common_support(&marginals);
        let res = ibp_barycenter(&support, &masses, &w, &params)?;
        let mut csv = String::new();
        for (p, m) in support.iter().zip(&res.masses) {
            for x in p {
                csv.push_str(&format!("{x:.17e},"));
            }
            csv.push_str(&format!("{m:.17e}\n"));
        }
        fs::write(dir.join("barycenter.csv"), csv)?;
        rec.iterations = res.iterations;
        rec.extra.insert("marginal_error".into(), format!("{:e}", res.error));
        println!("iterations {}  error {:.3e}", res.iterations, res.error);
        res.converged
    } else {
        if marginals.len() != 2 {
            bail!(Error::InvalidParameter(format!(
                "sinkhorn takes two marginals, got {}",
                marginals.len()
            )));
        }
        let cost = CostMatrix::squared_euclidean(marginals[0].points(), marginals[1].points());
        let res = sinkhorn_2m(&marginals[0], &marginals[1], &cost, &params)?;
        let history: String = res
            .history
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{},{e:e}\n", i + 1))
            .collect();
        fs::write(dir.join("sinkhorn_history.csv"), format!("iteration,marginal_error\n{history}"))?;
        rec.objective = res.transport_cost;
        rec.iterations = res.iterations;
        rec.extra.insert("regularized_cost".into(), format!("{:e}", res.regularized_cost));
        rec.extra.insert("marginal_error".into(), format!("{:e}", res.marginal_error));
        println!(
            "transport cost {:.16e}  iterations {}  marginal error {:.3e}",
            res.transport_cost, res.iterations, res.marginal_error
        );
        res.converged
    };
    rec.termination = if converged { "Converged" } else { "IterationLimit" }.into();
    rec.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_run_record(dir.join("run.json"), &rec)?;
    Ok(if converged { Outcome::Success } else { Outcome::Uncertified })
}

/// Exact cost of the monotone coupling of two measures on the line.
fn monotone_cost(a: &Marginal, b: &Marginal) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.masses()[0], b.masses()[0]);
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        let d = a.point(i)[0] - b.point(j)[0];
        cost += m * d * d;
        ra -= m;
        rb -= m;
        if ra <= rb {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a.masses()[i];
        } else {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b.masses()[j];
        }
    }
    cost
}

pub fn demo1d(
    common: &Common,
    size: usize,
    augment: Option<usize>,
    sinkhorn: Option<f64>,
) -> Result<Outcome> {
    let started = Instant::now();
    if size < 2 {
        bail!(Error::InvalidParameter("size must be at least 2".into()));
    }
    let (mu1, mu2) = reflected_pair(size);
    let marginals = vec![mu1.clone(), mu2.clone()];
    let shape = shape_of(&marginals);
    let dir = &common.out_dir;
    prepare_dir(dir)?;
    let mut init = reflection_init(&mu1, &mu2)?;
    let capacity = (common.beta * shape.iter().sum::<usize>() as f64) as usize;
    augment_random(&mut init.omega, &shape, augment.unwrap_or(capacity), common.seed);
    let mut cfg = config(common);
    cfg.max_stall = Some(common.max_stall.unwrap_or(4 * neighborhood_size(&shape)));
    let spec = CostSpec::Quadratic2M;
    let (state, term) = drive(common, dir, &marginals, &spec, cfg, init)?;
    let exact = monotone_cost(&mu1, &mu2);
    let gap = state.solution.objective - exact;
    write_solution(dir, &state)?;
    let mut rec = record("demo1d", &spec, &state, term, None, started);
    rec.extra.insert("exact_cost".into(), format!("{exact:.17e}"));
    rec.extra.insert("cost_error".into(), format!("{gap:e}"));
    if let Some(eps) = sinkhorn {
        let cost = CostMatrix::squared_euclidean(mu1.points(), mu2.points());
        let res = sinkhorn_2m(&mu1, &mu2, &cost, &SinkhornParams::with_epsilon(eps))?;
        rec.extra.insert("sinkhorn_cost".into(), format!("{:.17e}", res.transport_cost));
        rec.extra.insert("sinkhorn_iterations".into(), res.iterations.to_string());
        println!("sinkhorn cost {:.16e}  error {:.3e}", res.transport_cost, res.transport_cost - exact);
    }
    rec.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_run_record(dir.join("run.json"), &rec)?;
    report(&state, term);
    println!("exact cost {exact:.16e}  cost error {gap:.3e}");
    Ok(if term == Termination::SolveLimit { Outcome::Uncertified } else { Outcome::Success })
}
