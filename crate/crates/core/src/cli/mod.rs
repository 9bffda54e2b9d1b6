//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 query budget
//! exhausted, 4 oracle connection failure, 5 bad input (unreadable or
//! malformed files).

mod commands;
mod config;
mod specs;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::FileConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_GENERAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;
pub const EXIT_CONNECTION: u8 = 4;
pub const EXIT_BAD_INPUT: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn general(m: impl Into<String>) -> Self {
        Self::new(EXIT_GENERAL, m)
    }

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, m)
    }

    pub fn input(m: impl Into<String>) -> Self {
        Self::new(EXIT_BAD_INPUT, m)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::general(format!("{}: {e}", path.display()))
    }

    pub fn from_oracle(e: &simrecon::OracleError) -> Self {
        let code = if e.is_budget_exhausted() {
            EXIT_BUDGET
        } else if e.is_connection() {
            EXIT_CONNECTION
        } else {
            EXIT_GENERAL
        };
        Self::new(code, e.to_string())
    }

    pub fn from_run(e: &simrecon::RunError) -> Self {
        let code = if e.is_budget_exhausted() {
            EXIT_BUDGET
        } else if e.is_connection() {
            EXIT_CONNECTION
        } else if matches!(e, simrecon::RunError::Config(_)) {
            EXIT_USAGE
        } else {
            EXIT_GENERAL
        };
        Self::new(code, e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "simrecon",
    version,
    about = "Reconstruct images from similarity-only oracles"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit an eigenspace basis on a directory of PNGs or a synthetic corpus.
    PcaFit(PcaFitArgs),
    /// Reconstruct enrolled targets through a similarity oracle.
    Reconstruct(ReconstructArgs),
    /// K-fold verification accuracy, optionally with reconstructions swapped in.
    Evaluate(EvaluateArgs),
    /// One-axis-at-a-time hyperparameter sweeps on the synthetic world.
    Ablate(AblateArgs),
    /// Serve a builtin oracle over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct SharedArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Basis file written by `pca-fit`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// TOML file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct OptimizerArgs {
    /// Probe radius (default 0.3).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Step size (default 1/k).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of restarts (default 10).
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Iterations per restart (default 500).
    #[arg(long)]
    pub restart_iters: Option<u64>,
    /// Iterations of the main phase (default 15000).
    #[arg(long)]
    pub main_iters: Option<u64>,
    /// Log every n-th iteration (default 1).
    #[arg(long)]
    pub trace_every: Option<u64>,
    /// Gaussian restart initialization stddev (default 0, the mean face).
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Clamp probe images to [0, 1] before querying.
    #[arg(long)]
    pub clamp_probes: bool,
    /// Run restarts concurrently.
    #[arg(long)]
    pub parallel_restarts: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct OracleArgs {
    /// `builtin:<seed>[:<dim>[:flip]]` or `remote:<host:port>`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Query budget per target.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Round scores to a grid of 2^(1-bits).
    #[arg(long)]
    pub quantize_bits: Option<u32>,
    /// Add Gaussian noise to scores.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Enrolled images: a directory of PNGs (id = file stem) or
    /// `synthetic:<count>[:<corpus-seed>]`.
    #[arg(long)]
    pub enroll: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct PcaFitArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Directory of PNG training images.
    #[arg(long, conflicts_with = "synthetic")]
    pub images: Option<PathBuf>,
    /// Use this many images of the procedural corpus (seeded by --seed).
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// 1 or 3 (default 3).
    #[arg(long)]
    pub channels: Option<u32>,
    /// Output path (default <out-dir>/basis.bin).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Target ids to attack (default: every enrolled target).
    #[arg(long = "target")]
    pub targets: Vec<String>,
    /// Log transfer similarity under a second embedder `<seed>[:<dim>[:flip]]`
    /// (needs --enroll).
    #[arg(long)]
    pub transfer: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// CSV with header `id_a,path_a,id_b,path_b,label`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Directory holding `<id_a>.png` reconstructions for positive pairs.
    #[arg(long)]
    pub recon_dir: Option<PathBuf>,
    /// `<seed>[:<dim>[:flip]]`.
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    /// Basis rank used when k is not the swept axis (default 64).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_sigma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_restarts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_main_iters: Option<Vec<u64>>,
    /// Held-out targets per grid point (default 20).
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Training images for each fit (default 256).
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    /// `<seed>[:<dim>]` of the attacked embedder (default 1:32).
    #[arg(long)]
    pub target_embedder: Option<String>,
    /// `<seed>[:<dim>]` of the transfer embedder (default 2:32).
    #[arg(long)]
    pub transfer_embedder: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Listen address (default 127.0.0.1:8080; port 0 picks a free port).
    #[arg(long)]
    pub bind: Option<String>,
    /// Delay added to every scored answer.
    #[arg(long)]
    pub latency_ms: Option<u64>,
}

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PcaFit(a) => {
            let file = load_config(a.shared.config.as_ref())?;
            commands::pca_fit(a, file)
        }
        Command::Reconstruct(a) => {
            let file = load_config(a.shared.config.as_ref())?;
            commands::reconstruct(a, file)
        }
        Command::Evaluate(a) => {
            let file = load_config(a.shared.config.as_ref())?;
            commands::evaluate(a, file)
        }
        Command::Ablate(a) => {
            let file = load_config(a.shared.config.as_ref())?;
            commands::ablate(a, file)
        }
        Command::Serve(a) => {
            let file = load_config(a.shared.config.as_ref())?;
            commands::serve(a, file)
        }
    }
}
