//! `mfo`: dataset generation, training, evaluation, ablations and plots.
//!
//! Every command writes a `manifest.json` into its output directory holding
//! a canonical argument list and the resolved configuration, so
//! `mfo replay --manifest FILE --out DIR` reruns it.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod ablate;
pub mod common;
pub mod config;
pub mod eval;
pub mod generate;
pub mod manifest;
pub mod plot;
pub mod train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] moldflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Core(_) => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mfo", version, about = "Mold-filling simulation and neural operator surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a design space and store the trajectories.
    Generate(generate::GenerateArgs),
    /// Train a surrogate on a generated dataset.
    Train(train::TrainArgs),
    /// Score a checkpoint on one split.
    Eval(eval::EvalArgs),
    /// Train and score once per subsampling factor.
    Ablate(ablate::AblateArgs),
    /// Write field, error and interface images for one simulation.
    Plot(plot::PlotArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => generate::run(&a).map(drop),
        Command::Train(a) => train::run(&a).map(drop),
        Command::Eval(a) => eval::run(&a).map(drop),
        Command::Ablate(a) => ablate::run(&a).map(drop),
        Command::Plot(a) => plot::run(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let m = manifest::Manifest::read(&args.manifest)?;
    let argv = std::iter::once("mfo".to_string()).chain(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(format!("manifest arguments: {e}")))?;
    let pairs_file = |out: &PathBuf| -> CliResult<PathBuf> {
        let path = out.join("replay.cfg");
        config::write_pairs(&path, &m.config)?;
        Ok(path)
    };
    let command = match cli.command {
        Command::Generate(mut a) => {
            a.out = args.out.clone();
            Command::Generate(a)
        }
        Command::Train(mut a) => {
            a.out = args.out.clone();
            a.config = Some(pairs_file(&a.out)?);
            Command::Train(a)
        }
        Command::Eval(mut a) => {
            a.out = args.out.clone();
            Command::Eval(a)
        }
        Command::Ablate(mut a) => {
            a.out = args.out.clone();
            a.config = Some(pairs_file(&a.out)?);
            Command::Ablate(a)
        }
        Command::Plot(mut a) => {
            a.out = args.out.clone();
            Command::Plot(a)
        }
        Command::Replay(_) => return Err(CliError::Usage("a manifest cannot replay a replay".into())),
    };
    execute(command)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
