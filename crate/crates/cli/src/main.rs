//! `ctreport`: batch tooling for CT report corpora — triplet extraction,
//! report augmentation, metric evaluation, and 3D token geometry.
//!
//! Exit codes: 0 on success, 1 for configuration/validation problems
//! (unknown flags, missing files, inconsistent options), 2 for data errors
//! (malformed corpora, lexicons, or score files). Diagnostics go to stderr;
//! payloads go to files or stdout only, and repeated runs over identical
//! inputs produce byte-identical outputs.

mod augment;
mod config;
mod error;
mod evaluate;
mod extract;
mod output;
mod vol3d;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::augment::{run_augment, AugmentArgs};
use crate::config::{load_config, pick};
use crate::error::CliError;
use crate::evaluate::{run_evaluate, EvaluateArgs};
use crate::extract::{
    run_canonicalize, run_extract, run_questions, CanonicalizeArgs, ExtractArgs, QuestionsArgs,
};
use crate::vol3d::{run_vol3d, Vol3dCommand};

#[derive(Debug, Parser)]
#[command(
    name = "ctreport",
    version,
    about = "Structure, augment, and evaluate CT radiology report corpora"
)]
struct Cli {
    /// JSON config file supplying defaults; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-report parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract {entity, position, exist} triplets from report text.
    Extract(ExtractArgs),
    /// Rewrite extracted triplets through a canonicalization map.
    Canonicalize(CanonicalizeArgs),
    /// Render binary questions for the triplets in report text.
    Questions(QuestionsArgs),
    /// Append questioned and normality findings to generated reports.
    Augment(AugmentArgs),
    /// Score a prediction corpus against references.
    Evaluate(EvaluateArgs),
    /// 3D visual token geometry utilities.
    Vol3d {
        #[command(subcommand)]
        command: Vol3dCommand,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let jobs = pick(cli.jobs, config.jobs);
    match cli.command {
        Command::Extract(args) => run_extract(args, &config, jobs),
        Command::Canonicalize(args) => run_canonicalize(args, &config),
        Command::Questions(args) => run_questions(args, &config, jobs),
        Command::Augment(args) => run_augment(args, &config, jobs),
        Command::Evaluate(args) => run_evaluate(args, &config),
        Command::Vol3d { command } => run_vol3d(command, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are successful outcomes; anything else is a
            // usage problem and maps to the validation exit code.
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{err}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
