//! `gencol` command-line frontend.
//!
//! Exit codes: 0 success, 2 input or format error, 3 infeasible,
//! 4 iteration limit or stall without a certificate, 1 anything else.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "gencol", version, about = "Sparse multi-marginal optimal transport by genetic column generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every workflow.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Working-set capacity as a multiple of Σℓ_k.
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smallest dual violation that admits a child.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Consecutive rejected proposals before stopping [default: 10·Σℓ_k].
    #[arg(long)]
    pub max_stall: Option<usize>,
    /// Stop after this many re-solves.
    #[arg(long)]
    pub max_solves: Option<usize>,
    #[arg(long, env = "GENCOL_OUT_DIR", default_value = "gencol-out")]
    pub out_dir: PathBuf,
    /// Write one CSV record per re-solve to `progress.csv`.
    #[arg(long)]
    pub progress: bool,
}

/// Where the marginals come from.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// PGM images or CSV clouds (`x[,y[,z]],mass`), one marginal each.
    pub inputs: Vec<PathBuf>,
    /// IDX3 image archive; adds the images picked by `--images`.
    #[arg(long)]
    pub idx: Option<PathBuf>,
    /// Comma-separated image indices into `--idx`.
    #[arg(long, value_delimiter = ',', requires = "idx")]
    pub images: Vec<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Support points in input order.
    Stored,
    /// Support points sorted lexicographically by coordinates.
    Lex,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a multi-marginal problem with a named cost.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// quadratic, barycenter, spline, spline-approx, or table:PATH with
        /// lines `i1,...,iN,cost`.
        #[arg(long, default_value = "barycenter")]
        cost: String,
        /// Barycenter weights [default: uniform].
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        /// Knot times for the exact spline cost [default: equidistant on [0, 1]].
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Time step of the approximate spline cost [default: 1/(N−1)].
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, value_enum, default_value_t = Order::Lex)]
        order: Order,
        /// Certify the result; the exit code then reflects the certificate.
        #[arg(long)]
        certify: bool,
        /// Sample count when the grid is too large for a full scan.
        #[arg(long, default_value_t = 1_000_000)]
        budget: u64,
    },
    /// Weighted barycenter with pushforward cloud and optional raster.
    Barycenter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Barycenter weights [default: uniform].
        #[arg(long, value_delimiter = ',', conflicts_with = "weight_grid")]
        weights: Vec<f64>,
        /// Sweep all weights on the simplex with this many steps per unit,
        /// one subdirectory each.
        #[arg(long)]
        weight_grid: Option<usize>,
        /// Raster refinement factor; 0 skips rasterization.
        #[arg(long, default_value_t = 0)]
        refine: usize,
        /// Pixel grid of the inputs as WIDTHxHEIGHT.
        #[arg(long, default_value = "28x28")]
        grid: String,
        /// Gaussian blur width in fine cells for the thresholded mask.
        #[arg(long, requires = "level")]
        sigma: Option<f64>,
        /// Threshold relative to the blurred maximum.
        #[arg(long, requires = "sigma")]
        level: Option<f64>,
    },
    /// Wasserstein spline through marginals at increasing times.
    Spline {
        #[command(flatten)]
        common: Common,
        /// Marginals; without inputs six built-in 1-D Gaussians are used.
        #[command(flatten)]
        input: InputArgs,
        /// Knot times, strictly increasing in [0, 1] [default: equidistant].
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Query times; defaults to `--frames` equidistant times.
        #[arg(long, value_delimiter = ',')]
        query: Vec<f64>,
        #[arg(long, default_value_t = 21)]
        frames: usize,
        /// Use the second-difference cost instead of the exact spline energy.
        #[arg(long)]
        approx: bool,
    },
    /// Northwest-corner initial plan and its feasibility.
    Nwcorner {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = Order::Lex)]
        order: Order,
    },
    /// Entropic baselines: two-marginal Sinkhorn or a fixed-support barycenter.
    Sinkhorn {
        #[command(flatten)]
        common: Common,
        /// Marginals; without inputs the built-in 1-D pair is used.
        #[command(flatten)]
        input: InputArgs,
        /// Regularization relative to the squared support diameter.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        /// Plain kernel scaling instead of log-domain updates.
        #[arg(long)]
        kernel: bool,
        /// Iterative Bregman projection barycenter on the union of supports.
        #[arg(long)]
        barycenter: bool,
        /// Barycenter weights [default: uniform].
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
    },
    /// The 1-D two-marginal example with a known exact answer.
    ///
    /// Without `--max-stall` the stall budget is four times the number of
    /// one-coordinate children of a maximal sparse plan.
    Demo1d {
        #[command(flatten)]
        common: Common,
        /// Grid points per marginal.
        #[arg(long, default_value_t = 100)]
        size: usize,
        /// Random configurations added to the initial set [default: the capacity].
        #[arg(long)]
        augment: Option<usize>,
        /// Also run Sinkhorn at this relative regularization.
        #[arg(long)]
        sinkhorn: Option<f64>,
    },
    /// Solve, then scan the grid for dual violations.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Same choices as `solve --cost`.
        #[arg(long, default_value = "barycenter")]
        cost: String,
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        budget: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { common, input, cost, weights, times, step, order, certify, budget } => {
            let cost = commands::CostArgs { name: cost, weights, times, step };
            commands::solve(&common, &input, &cost, order, certify.then_some(budget), "solve")
        }
        Command::Certify { common, input, cost, weights, times, step, budget } => {
            let cost = commands::CostArgs { name: cost, weights, times, step };
            commands::solve(&common, &input, &cost, Order::Lex, Some(budget), "certify")
        }
        Command::Barycenter { common, input, weights, weight_grid, refine, grid, sigma, level } => {
            let raster = commands::RasterArgs { refine, grid, blur: sigma.zip(level) };
            commands::barycenter(&common, &input, weights, weight_grid, &raster)
        }
        Command::Spline { common, input, times, query, frames, approx } => {
            commands::spline(&common, &input, times, query, frames, approx)
        }
        Command::Nwcorner { common, input, order } => commands::nwcorner(&common, &input, order),
        Command::Sinkhorn { common, input, epsilon, max_iter, kernel, barycenter, weights } => {
            let params = commands::entropic_params(epsilon, max_iter, kernel);
            commands::sinkhorn(&common, &input, params, barycenter, weights)
        }
        Command::Demo1d { common, size, augment, sinkhorn } => {
            commands::demo1d(&common, size, augment, sinkhorn)
        }
    };
    match result {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
