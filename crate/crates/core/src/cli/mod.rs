//! Command-line front end: `train`, `generate`, `evaluate` and `benchmark`.

mod commands;
mod manifest;

pub use commands::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_train, generate_raw, judge, resolve_config,
    BenchmarkArgs, BenchmarkVerdict, Criterion, EvaluateArgs, GenerateArgs, TrainArgs,
    BENCHMARK_ROWS, FITTED_SCHEMA_FILE, MARGINAL_BOUND, MIA_AUC_BOUND, NMI_BOUND, REAL_TEST_FILE,
    REAL_TRAIN_FILE, REWARD_BAND, REWARD_WINDOW, UTILITY_GAP_BOUND, VERDICT_FILE,
};
pub use manifest::{CommandKind, RunManifest, RunStatus, MANIFEST_FILE};

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_ACCEPTANCE: u8 = 3;

/// Environment variable holding the log filter, in `env_logger` syntax.
pub const LOG_ENV: &str = "RLSYN_LOG";

#[derive(Debug, Parser)]
#[command(name = "rlsyn", version, about = "PPO-trained synthetic tabular data generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator on a CSV dataset.
    Train {
        /// TOML config; an optional `profile` key selects the base profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base profile (mimic-like, aireadi-like, bench-small); overrides the file's.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// JSON feature schema of the data.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from the latest periodic checkpoint in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Sample synthetic records from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Row count; defaults to the training-set size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Reject the checkpoint unless its schema matches this one.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Compute privacy, utility and fidelity metrics.
    Evaluate {
        #[arg(long)]
        real_train: PathBuf,
        #[arg(long)]
        real_test: PathBuf,
        #[arg(long)]
        syn_train: PathBuf,
        #[arg(long)]
        syn_test: PathBuf,
        /// Schema with normalization stats; stats are fitted on real-train when absent.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-side row cap for the membership attack.
        #[arg(long)]
        mia_cap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// End-to-end run on the generated benchmark dataset.
    Benchmark {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// TOML overrides layered over the bench-small profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

/// Exit code for an error: divergence is 2, everything else 1.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

/// Executes a parsed command and returns its exit code.
pub fn execute(cli: Cli) -> u8 {
    let outcome = match cli.command {
        Command::Train {
            config,
            profile,
            data,
            schema,
            out,
            seed,
            iterations,
            resume,
        } => cmd_train(&TrainArgs {
            config,
            profile,
            data,
            schema,
            out,
            seed,
            iterations,
            resume,
        })
        .map(|s| {
            println!("trained {} iterations", s.iteration);
            EXIT_OK
        }),
        Command::Generate {
            checkpoint,
            n,
            seed,
            out,
            schema,
        } => cmd_generate(&GenerateArgs {
            checkpoint,
            n,
            seed,
            out: out.clone(),
            schema,
        })
        .map(|m| {
            println!("wrote {} rows to {}", m.rows(), out.display());
            EXIT_OK
        }),
        Command::Evaluate {
            real_train,
            real_test,
            syn_train,
            syn_test,
            schema,
            out,
            mia_cap,
            seed,
        } => cmd_evaluate(&EvaluateArgs {
            real_train,
            real_test,
            syn_train,
            syn_test,
            schema,
            out: out.clone(),
            mia_cap,
            seed,
        })
        .map(|_| {
            println!("report written to {}", out.display());
            EXIT_OK
        }),
        Command::Benchmark {
            seed,
            out,
            config,
            iterations,
        } => cmd_benchmark(&BenchmarkArgs {
            seed,
            out,
            config,
            iterations,
        })
        .map(|v| {
            for c in &v.criteria {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} = {:.4} ({})", c.name, c.measured, c.bound);
            }
            if v.passed {
                EXIT_OK
            } else {
                EXIT_ACCEPTANCE
            }
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

/// Parses `args`, sets up logging and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .try_init();
    match Cli::try_parse_from(args) {
        Ok(cli) => ExitCode::from(execute(cli)),
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK })
        }
    }
}
