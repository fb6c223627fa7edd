//! `polarlab` — train and evaluate neural polar decoders.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors split by exit code: 2 for usage/config, 3 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "polarlab", version, about = "Neural decoders for short polar codes")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run seed; overrides `seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Evaluation worker threads. Results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured architecture; writes checkpoint.json and trace.csv.
    Train {
        /// Overrides `arch`.
        #[arg(long)]
        arch: Option<String>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// BER of SC and each checkpoint; writes ber.csv.
    Ber { checkpoints: Vec<PathBuf> },
    /// Denoiser input/output SNR; writes snr.csv.
    Snr { checkpoint: PathBuf },
    /// Received vs denoised symbol histograms; writes pdf.csv.
    Pdf { checkpoint: PathBuf },
    /// Per-frame decode time of SC and the given checkpoints (all six
    /// untrained architectures when none are given); writes timing.csv.
    Bench { checkpoints: Vec<PathBuf> },
    /// Print the trainable-parameter count of an architecture.
    Params {
        arch: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(workers) = cli.global.workers {
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Params { arch, n, k } => commands::params(&arch, n, k),
        Command::Train { arch, epochs } => commands::train(g, arch, epochs),
        Command::Ber { checkpoints } => commands::ber(g, &checkpoints),
        Command::Snr { checkpoint } => commands::snr(g, &checkpoint),
        Command::Pdf { checkpoint } => commands::pdf(g, &checkpoint),
        Command::Bench { checkpoints } => commands::bench(g, &checkpoints),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POLARLAB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
