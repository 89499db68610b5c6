//! `conical`: command-line front end for conical-hull NMF.
//!
//! Exit codes: 0 on success, 1 on validation or I/O errors, 2 when a run
//! completed but produced warnings (early termination, an unconverged
//! solve, a failed check).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use conical::{ExteriorMode, GridSpec, Loss, NoiseModel, SolverOptions};
use serde::Serialize;

/// Environment variable capping the worker pool; 0 or unset means one
/// worker per core.
pub const THREADS_ENV: &str = "CONICAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "conical", version, about = "Near-separable NMF by conical hull expansion")]
struct Cli {
    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Factorize a non-negative CSV matrix.
    Factorize(FactorizeArgs),
    /// Anchor recovery sweep over a noise grid on synthetic data.
    Bench(BenchArgs),
    /// Pick representative columns of a CSV matrix.
    Exemplars(ExemplarsArgs),
    /// Background/foreground separation of a directory of PGM frames.
    Bgfg(BgfgArgs),
    /// Compare the constrained l1 solve with the per-pixel median.
    MedianCheck(MedianCheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FactorizeArgs {
    /// Input matrix, one row per line, comma separated.
    pub matrix: PathBuf,
    /// Number of anchor columns.
    #[arg(long)]
    pub rank: usize,
    /// l1, l2, kl, is, or a reverse Bregman loss such as kl-reverse.
    #[arg(long, default_value = "l1")]
    pub loss: Loss,
    /// Exterior column rule: max or rand.
    #[arg(long, default_value = "max")]
    pub exterior: ExteriorMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Alternating refinement steps on top of the anchor fit.
    #[arg(long, default_value_t = 0)]
    pub refit: usize,
    /// Skip the first line of the CSV.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value = "conical-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// laplace (grid is the noise scale) or exponential (grid is the mean).
    #[arg(long)]
    pub noise: NoiseModel,
    /// Inclusive grid `start:stop:step`.
    #[arg(long)]
    pub grid: GridSpec,
    /// Comma-separated losses; defaults to l1,l2 for laplace and is,l2 for
    /// exponential noise.
    #[arg(long, value_delimiter = ',')]
    pub algos: Vec<Loss>,
    /// Instances averaged per grid point.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First instance seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 20)]
    pub r: usize,
    #[arg(long, default_value_t = 210)]
    pub n: usize,
    #[arg(long, default_value = "max")]
    pub exterior: ExteriorMode,
    #[arg(long, default_value = "conical-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExemplarsArgs {
    /// Input matrix; exemplars are chosen among its columns.
    pub matrix: PathBuf,
    /// Number of exemplars.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = "l1")]
    pub loss: Loss,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value = "conical-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BgfgArgs {
    /// Directory of equally sized PGM frames, read in file-name order.
    pub frames: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value = "l1")]
    pub loss: Loss,
    #[arg(long, default_value_t = 10)]
    pub refit: usize,
    #[arg(long, default_value = "max")]
    pub exterior: ExteriorMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of ground-truth masks, one per frame; enables roc.csv.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Thresholds on |S| (intensities scaled to [0, 1]) as `start:stop:step`.
    #[arg(long, default_value = "0:1:0.001")]
    pub thresholds: GridSpec,
    #[arg(long, default_value = "conical-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MedianCheckArgs {
    /// Directory of equally sized PGM frames.
    pub frames: PathBuf,
    #[arg(long, default_value = "conical-out")]
    pub out: PathBuf,
}

/// Everything a run depends on; written as the manifest next to the outputs.
#[derive(Debug, Serialize)]
pub struct ResolvedConfig {
    pub tool: &'static str,
    pub version: &'static str,
    /// Requested worker count, 0 for automatic.
    pub threads: usize,
    pub solver: SolverOptions,
    #[serde(flatten)]
    pub command: Command,
}

/// How a run that did not error ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Warnings,
}

impl Command {
    /// Fills defaults that depend on other arguments.
    fn resolve(&mut self) {
        if let Command::Bench(args) = self {
            if args.algos.is_empty() {
                args.algos = match args.noise {
                    NoiseModel::Laplace => vec![Loss::L1, Loss::l2()],
                    NoiseModel::Exponential => vec!["is".parse().expect("known loss"), Loss::l2()],
                };
            }
        }
    }
}

fn threads_from_env() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a non-negative integer")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => bail!("{THREADS_ENV}: {e}"),
    }
}

fn real_main(cli: Cli) -> anyhow::Result<Outcome> {
    let threads = threads_from_env()?;
    let mut command = cli.command;
    command.resolve();
    let config = ResolvedConfig {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        threads,
        solver: SolverOptions::default(),
        command,
    };
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(Outcome::Success);
    }
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    commands::dispatch(&config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match real_main(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Warnings) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
