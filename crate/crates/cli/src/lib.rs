//! Command-line front end: data synthesis, training, evaluation, gradient
//! checks and filter export, each driven by a resolved [`RunConfig`].

mod commands;
pub mod config;
mod error;
mod pgm;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rwta::engine::Precision;

pub use commands::{gradcheck_model, CONFIG_FILE};
pub use config::{Mode, RunConfig};
pub use error::CliError;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "RWTA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rwta", version, about = "Recurrent winner-take-all video autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build rotated or scanned video datasets from IDX files or procedural digits.
    Synth,
    /// Unsupervised two-stream training; writes checkpoint.bin and metrics.csv.
    Train,
    /// Supervised training of a classifier head from a checkpoint or fresh weights.
    Finetune,
    /// Feature extraction, linear SVM and a report (`--mode svm` or `--mode vote`).
    Eval,
    /// Finite-difference check of every parameter gradient of the loss.
    Gradcheck,
    /// Write every decoder filter as a PGM image.
    DumpFilters,
}

#[derive(Debug, Args)]
struct Flags {
    /// key=value configuration file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Float width: 32 or 64.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Single-stream execution and zeroed wall-clock columns.
    #[arg(long, global = true)]
    deterministic: bool,
    /// rotate|scan for synth, svm|vote for eval.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Rotation step in degrees.
    #[arg(long, global = true)]
    step: Option<f64>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Any other configuration key, as KEY=VALUE (repeatable).
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::default();
    if let Some(p) = &flags.config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
        c.merge_text(&text)?;
    }
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        c.set(k.trim(), v)?;
    }
    let s = |v: &dyn ToString| v.to_string();
    let overrides: [(&str, Option<String>); 7] = [
        ("seed", flags.seed.map(|v| s(&v))),
        ("precision", flags.precision.clone()),
        ("deterministic", flags.deterministic.then(|| "true".into())),
        ("mode", flags.mode.clone()),
        ("frames", flags.frames.map(|v| s(&v))),
        ("step", flags.step.map(|v| s(&v))),
        ("out", flags.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            c.set(k, &v)?;
        }
    }
    Ok(c)
}

fn configure_threads(c: &RunConfig) -> Result<(), CliError> {
    if c.deterministic {
        return Ok(());
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got `{v}`")))?;
        rwta::par::configure_threads(n);
    }
    Ok(())
}

fn dispatch(command: &Command, c: &RunConfig) -> Result<(), CliError> {
    macro_rules! by_precision {
        ($f:ident) => {
            match c.precision {
                Precision::F32 => commands::$f::<f32>(c),
                Precision::F64 => commands::$f::<f64>(c),
            }
        };
    }
    match command {
        Command::Synth => by_precision!(synth),
        Command::Train => by_precision!(train),
        Command::Finetune => by_precision!(finetune),
        Command::Eval => by_precision!(eval),
        Command::Gradcheck => by_precision!(gradcheck),
        Command::DumpFilters => by_precision!(dump_filters),
    }
}

/// Runs one invocation and returns its exit status: 0 success, 1 runtime
/// failure, 2 usage error.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve(&cli.flags).and_then(|c| {
        configure_threads(&c)?;
        commands::prepare_out(&c)?;
        dispatch(&cli.command, &c)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
