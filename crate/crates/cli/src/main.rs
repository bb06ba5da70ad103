//! Command-line front end: dataset generation, training, single-channel
//! solves, rate-region sweeps and latency benchmarks.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;
use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NOMA_SECRECY_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "noma-secrecy", version, about = "Secure MIMO-NOMA covariance design")]
struct Cli {
    /// Worker threads for batch work (default: all cores). Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML settings (keys are long flag names with underscores) or a run
    /// manifest to replay. Flags win over file entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for outputs without an explicit path.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label seeded channels with the power-splitting solver.
    GenData(GenDataArgs),
    /// Train a precoder network on a labeled dataset.
    Train(TrainArgs),
    /// Covariances and secrecy rates for one channel.
    Solve(SolveArgs),
    /// Mean rate pairs over an alpha grid for several methods, as CSV.
    Region(RegionArgs),
    /// Paired latency benchmark of the methods, as JSON.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DimArgs {
    /// Transmit antennas.
    #[arg(long = "nt")]
    pub nt: Option<usize>,
    /// Receive antennas of user 1.
    #[arg(long)]
    pub n1: Option<usize>,
    /// Receive antennas of user 2.
    #[arg(long)]
    pub n2: Option<usize>,
    /// Total transmit power.
    #[arg(long)]
    pub power: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    /// Iteration cap of the gradient solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop once an accepted step gains fewer bits than this.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Initial step (default: a tenth of the power budget).
    #[arg(long)]
    pub step0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Share of the power for user 1.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of samples.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file (default: dataset-a<alpha>-s<seed>.bin in the output
    /// directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write a CSV copy next to the dataset.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation dataset.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Model file (default: model-a<alpha>.bin in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub drop_factor: Option<f64>,
    /// Epochs between learning-rate drops.
    #[arg(long)]
    pub drop_period: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Iterations between validation passes.
    #[arg(long)]
    pub validation_frequency: Option<usize>,
    /// Validation passes without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Seed for initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed of a random channel (ignored with --channel).
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with `h1` and `h2` as arrays of rows.
    #[arg(long)]
    pub channel: Option<PathBuf>,
    /// solver, gsvd or dnn.
    #[arg(long)]
    pub method: Option<String>,
    /// Model file, required for the dnn method.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Result file (default: solve.json in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RegionArgs {
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Alpha grid as start:step:end.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Number of random channels to average over.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Methods, comma separated (default: solver,gsvd, plus dnn when models
    /// are given).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// One model file per alpha of the grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<PathBuf>>,
    /// CSV file (default: region.csv in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Timed repetitions per method (at least 30).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Number of distinct channels cycled through.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Methods, comma separated (default: solver,dnn,gsvd).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Model for the dnn method (default: an untrained network of the
    /// standard architecture, which has the same cost).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON file (default: bench.json in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("configuring threads: {e}")))?;
    }
    let name = match &cli.command {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Solve(_) => "solve",
        Command::Region(_) => "region",
        Command::Bench(_) => "bench",
    };
    let settings = match &cli.config {
        Some(p) => Settings::load(p, name)?,
        None => Settings::empty(),
    };
    let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("."));
    let ctx = commands::Context {
        settings,
        out_dir,
        command: name,
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Solve(a) => commands::solve(&ctx, a),
        Command::Region(a) => commands::region(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
