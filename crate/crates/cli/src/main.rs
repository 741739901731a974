//! `pcfm`: data generation, training, constrained sampling, evaluation and
//! ablation sweeps, each leaving a `run.json` manifest next to its outputs.

mod commands;
mod error;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pcfm", version, about = "Physics-constrained flow matching on 1-D PDE benchmarks")]
struct Cli {
    /// Worker threads for sample and solve loops (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a family of PDE instances into a dataset directory.
    GenData(Box<commands::gen_data::GenDataArgs>),
    /// Fit a velocity field to a dataset by conditional flow matching.
    Train(commands::train::TrainArgs),
    /// Draw a constrained (or plain) sample batch from a trained model.
    Sample(commands::sample::SampleArgs),
    /// Compare generated batches against a reference batch.
    Eval(commands::eval::EvalArgs),
    /// Sweep step counts and penalty weights, or collocation counts.
    Ablate(commands::ablate::AblateArgs),
    /// Re-run the command recorded in a run manifest.
    Replay {
        /// Path to a `run.json`.
        manifest: PathBuf,
    },
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        // a replayed run may try to configure the pool a second time
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(*a, &argv),
        Command::Train(a) => commands::train::run(a, &argv),
        Command::Sample(a) => commands::sample::run(a, &argv),
        Command::Eval(a) => commands::eval::run(a, &argv),
        Command::Ablate(a) => commands::ablate::run(a, &argv),
        Command::Replay { manifest } => {
            let recorded = manifest::read_manifest(&manifest)?;
            if recorded.argv.get(1).is_some_and(|c| c == "replay") {
                return Err(CliError::Data("manifest records a replay, not a command".into()));
            }
            run(recorded.argv)
        }
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
