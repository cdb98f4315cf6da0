mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`, then `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sample-parallel work.
    #[arg(long, env = "DEEPLIMIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize the n-layer objective.
    TrainDiscrete(RunArgs),
    /// Minimize the continuum objective on a nodal grid.
    TrainContinuum(RunArgs),
    /// Minimize along a ladder of layer counts and compare with the continuum fit.
    Ladder(RunArgs),
    /// Check the explicit-Euler error bound on smooth parameters.
    EulerBound(RunArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(RunArgs),
    /// Evaluate the cell-average recovery sequence of a smooth kernel.
    RecoveryCheck(RunArgs),
    /// Test the discrete Morrey inequality on random paths.
    MorreySweep(RunArgs),
    /// Fit a power law to a column of a results CSV.
    RateFit(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::TrainDiscrete(a) => ("train-discrete", a),
            Command::TrainContinuum(a) => ("train-continuum", a),
            Command::Ladder(a) => ("ladder", a),
            Command::EulerBound(a) => ("euler-bound", a),
            Command::GradCheck(a) => ("grad-check", a),
            Command::RecoveryCheck(a) => ("recovery-check", a),
            Command::MorreySweep(a) => ("morrey-sweep", a),
            Command::RateFit(a) => ("rate-fit", a),
        }
    }
}

/// Discrete and continuum ResNet training experiments.
#[derive(Debug, Parser)]
#[command(name = "deeplimit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<PathBuf, Box<dyn std::error::Error + Send + Sync>> {
    let (name, args) = cli.command.split();
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment));
    log::info!("{name}: config {}, output {}", args.config.display(), out.display());
    commands::dispatch(name, &cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::InvalidSubcommand => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_help());
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
