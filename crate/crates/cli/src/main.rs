//! `dmfpca`: derivative FPCA and its simulation benchmark from the shell.

mod artifacts;
mod failure;
mod fit;
mod manifest;
mod metrics;
mod simulate;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::{Failure, Outcome};

#[derive(Parser, Debug)]
#[command(name = "dmfpca", version, about = "Eigencomponents and reconstructions of derivatives of multivariate functional data")]
struct Cli {
    /// Print errors as a single JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DMFPCA_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one replication of a benchmark setting with its truth.
    Simulate(SimulateArgs),
    /// Estimate derivative eigencomponents and reconstructions.
    Fit(FitArgs),
    /// Compare a fit directory against a truth directory.
    Metrics(MetricsArgs),
    /// Run the simulation study described by a JSON config.
    Study(StudyArgs),
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SimulateArgs {
    /// dense-clean, dense-noisy, sparse-medium or sparse-high.
    #[arg(long)]
    pub setting: String,
    #[arg(long, default_value_t = 0)]
    pub replication: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Truth components written to truth_eigen.csv.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct FitArgs {
    /// Long-format CSV with header id,feature,t,y.
    #[arg(long)]
    pub input: PathBuf,
    /// dmfpca, dmkl, direct or mfpca.
    #[arg(long, default_value = "dmfpca")]
    pub method: String,
    /// Derivative order.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Multivariate components kept.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Univariate share of variance to keep per feature.
    #[arg(long, conflicts_with = "components")]
    pub pve: Option<f64>,
    /// Fixed number of univariate components per feature.
    #[arg(long)]
    pub components: Option<usize>,
    /// Fixed smoothing parameter for every spline (default: cross-validated).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Points of the evaluation grid.
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// Common domain `lo,hi` of every feature (default: range of the data).
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
    /// auto, blup or integration.
    #[arg(long, default_value = "auto")]
    pub scores: String,
    /// Declare the data noise-free.
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct MetricsArgs {
    /// Output directory of `fit` (or any directory with the same files).
    #[arg(long)]
    pub estimate: PathBuf,
    /// Output directory of `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Components compared (default: all the truth provides).
    #[arg(long)]
    pub k: Option<usize>,
    /// Where metrics.csv goes (default: the estimate directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct StudyArgs {
    /// JSON with settings, methods, replications, seed, k and jobs.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Exit nonzero when any replication failed.
    #[arg(long)]
    pub strict: bool,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    if !(hi > lo) {
        return Err("upper bound must exceed lower bound".into());
    }
    Ok((lo, hi))
}

fn configure_jobs(jobs: Option<usize>) -> Outcome {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    configure_jobs(cli.jobs)?;
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Fit(a) => fit::run(&a),
        Command::Metrics(a) => metrics::run(&a),
        Command::Study(a) => study::run(&a, cli.jobs),
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            if json_errors {
                Failure::usage(e.to_string().trim()).report(true);
                return ExitCode::from(2);
            }
            e.exit()
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report(json_errors);
            ExitCode::from(f.code() as u8)
        }
    }
}
