//! `sparsedict`: spectral analysis of activation dumps and TopK sparse
//! autoencoder training from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 bad or unreadable data, 4 numerical
//! failure (including divergence).

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsedict::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "sparsedict", version, about = "Activation spectra and TopK sparse autoencoders")]
struct Cli {
    /// Settings file, JSON or `key = value` lines. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic activation file with a prescribed spectrum.
    GenSynthetic(commands::generate::Flags),
    /// Singular values and intrinsic dimension of activation files.
    AnalyzeSpectrum(commands::spectrum::Flags),
    /// Split attention-output variance into head-output and W_O parts.
    DecomposeVariance(commands::decompose::Flags),
    /// Train one TopK sparse autoencoder.
    TrainSae(commands::train::Flags),
    /// Train a grid of widths, variants and seeds.
    ScalingSweep(commands::sweep::Flags),
    /// Collect sweeps, metrics and spectra into plot-ready CSV series.
    Report(commands::report::Flags),
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Usage) => 2,
        Some(ErrorKind::Data | ErrorKind::Io) => 3,
        Some(ErrorKind::Numeric) => 4,
        None if err.chain().any(|c| c.is::<std::io::Error>() || c.is::<serde_json::Error>()) => 3,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = settings::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenSynthetic(f) => commands::generate::run(&file, &f),
        Command::AnalyzeSpectrum(f) => commands::spectrum::run(&file, &f),
        Command::DecomposeVariance(f) => commands::decompose::run(&file, &f),
        Command::TrainSae(f) => commands::train::run(&file, &f),
        Command::ScalingSweep(f) => commands::sweep::run(&file, &f),
        Command::Report(f) => commands::report::run(&file, &f),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
