//! Command-line driver: config parsing, commands and exit-code mapping.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

pub const THREADS_ENV: &str = "ORTHO_SHOT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ortho-shot", version, about = "Orthogonal-convolution few-shot learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset as PNG files plus a manifest.
    GenData,
    /// Run the oracle property suite.
    Verify,
    /// Meta-train, write metrics and a checkpoint, then evaluate.
    Train,
    /// Evaluate a checkpoint on the meta-test split.
    Eval,
    /// Time dense against FFT Toeplitz matrix-vector products.
    BenchMatvec,
    /// Capacity surrogate and structured-matrix budget.
    VcBound,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if matches!(cli.command, Command::Verify) => RunConfig::default(),
        None => return Err(CliError::Config("--config FILE is required".into())),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn thread_count(cfg: &RunConfig) -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(cfg.threads),
    }
}

/// Runs one command and returns its stdout text.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(&cfg)?)
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval_cmd(&cfg),
        Command::BenchMatvec => commands::bench_matvec(&cfg),
        Command::VcBound => commands::vc_bound(&cfg),
    })
}

/// Parses `args`, runs the command, prints its output and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
