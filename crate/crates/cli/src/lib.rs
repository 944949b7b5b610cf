//! `spad`: a single binary exposing the full pipeline — cube simulation,
//! multiscale extraction, Bayesian fusion, unrolled-network inference and
//! training, metric evaluation, and point-cloud export.
//!
//! Exit codes: 0 on success, 1 for usage/configuration problems, 2 for
//! data or model errors. All diagnostics go to stderr; outputs are files.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;

use config::RunConfig;

// ===========================================================================
// Errors
// ===========================================================================

/// CLI failure classes, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config: exit 1.
    Usage(String),
    /// Bad data, model, or I/O: exit 2.
    Data(String),
}

impl From<spad_core::Error> for CliError {
    fn from(e: spad_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Requires a value merged from flags and config.
pub(crate) fn req<T>(flag: &str, value: Option<T>) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "missing required value `{flag}` (pass the flag or set it in --config)"
        ))
    })
}

/// `SPAD_THREADS` as the default for `--threads`.
pub(crate) fn env_threads() -> Result<Option<usize>, CliError> {
    match std::env::var("SPAD_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!(
                "SPAD_THREADS must be a positive integer, got `{v}`"
            ))
        }),
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers, or on the global
/// pool when unset.
pub(crate) fn with_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Data(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

// ===========================================================================
// Argument tree
// ===========================================================================

#[derive(Debug, Parser)]
#[command(
    name = "spad",
    version,
    about = "Single-photon lidar simulation, multiscale depth extraction, and depth/uncertainty reconstruction"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for the parallel kernels (default: SPAD_THREADS or
    /// all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a photon-count histogram cube for a scene.
    Simulate(commands::SimulateArgs),
    /// Extract the multiscale maximum-likelihood depth stack from a cube.
    Extract(commands::ExtractArgs),
    /// Reconstruct depth + uncertainty by Bayesian multiscale fusion.
    Bayes(commands::BayesArgs),
    /// Reconstruct depth + uncertainty with a trained unrolled network.
    Unroll(commands::UnrollArgs),
    /// Train unrolled-network weights on simulated pairs.
    Train(commands::TrainArgs),
    /// Compare a predicted depth map against ground truth.
    Eval(commands::EvalArgs),
    /// Convert a depth map (plus optional intensity) to an ASCII PLY cloud.
    #[command(name = "export-ply")]
    ExportPly(commands::ExportPlyArgs),
}

// ===========================================================================
// Dispatch
// ===========================================================================

/// Parses `argv` and runs the selected command, returning the process exit
/// code. All messages go to the diagnostic stream.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(CliError::Usage(msg)) | Err(CliError::Data(msg)) => {
                eprintln!("error: {msg}");
                return 1;
            }
        },
        None => RunConfig::default(),
    };

    let threads = cli.threads;
    let outcome = match cli.command {
        Command::Simulate(args) => commands::run_simulate(args, &cfg, threads),
        Command::Extract(args) => commands::run_extract(args, &cfg, threads),
        Command::Bayes(args) => commands::run_bayes_cmd(args, &cfg, threads),
        Command::Unroll(args) => commands::run_unroll(args, &cfg, threads),
        Command::Train(args) => commands::run_train(args, &cfg, threads),
        Command::Eval(args) => commands::run_eval(args, &cfg, threads),
        Command::ExportPly(args) => commands::run_export_ply(args, &cfg, threads),
    };

    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
