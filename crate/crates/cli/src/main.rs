//! `icnn-ot` command line: training runs, the reference experiments, sweeps and
//! re-evaluation of saved parameters.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

/// Default output root when neither `--out` nor the config names a directory.
pub const OUT_ENV: &str = "ICNN_OT_OUT";

#[derive(Debug, Parser)]
#[command(name = "icnn-ot", version, about = "Optimal transport maps from input convex neural networks")]
struct Cli {
    /// Worker threads for ensembles and sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct OutArgs {
    /// Output directory [default: config `output`, else $ICNN_OT_OUT/<name>, else runs/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the run seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network from an experiment file.
    Train {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one of the built-in experiments with its published settings.
    Paper {
        /// disk-ellipse, ellipse-ellipse, gauss-uniform, gauss-gauss, bimodal-uniform or cube-3d.
        experiment: String,
        /// Ensemble size [default: the experiment's].
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sensitivity sweep of L² test error along one configuration axis.
    Sweep {
        config: PathBuf,
        /// epochs, collocation or ratio.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Runs per axis value [default: the config's].
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run the evaluations of an experiment file on saved parameters.
    Eval {
        config: PathBuf,
        params: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convexity and gradient checks on saved parameters.
    Audit {
        params: PathBuf,
        /// Sample audit points from this experiment's source domain instead of the unit box.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Train { config, out } => commands::train(&config, out.seed, out.out),
        Command::Paper { experiment, runs, out } => commands::paper(&experiment, runs, out.seed, out.out),
        Command::Sweep { config, axis, values, runs, out } => {
            commands::sweep(&config, &axis, &values, runs, out.seed, out.out)
        }
        Command::Eval { config, params, out } => commands::eval(&config, &params, out.seed, out.out),
        Command::Audit { params, config, points, seed } => commands::audit(&params, config.as_deref(), points, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
