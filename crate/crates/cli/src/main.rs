//! `patchwork` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check misses its tolerance or a run
//! fails numerically, 2 on usage, configuration, or file errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "patchwork", version, about = "Patch tokenization, jitter, augmentation, and rollout tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the frequency-domain resampling identities against direct sums.
    SpectralCheck(commands::spectral::SpectralArgs),
    /// Spectra of a pure mode passed through a random patch autoencoder.
    JitterDemo(commands::jitter::JitterArgs),
    /// Apply an octahedral group element and a time stride to a container.
    Augment(commands::augment::AugmentArgs),
    /// Simulate sharded-sampling throughput for a dataset catalog.
    SimulateSched(commands::sched::SchedArgs),
    /// Roll a model out over a container and report per-step metrics.
    RolloutEval(commands::rollout::RolloutArgs),
    /// Write synthetic periodic advection trajectories.
    GenSynthetic(commands::synth::SynthArgs),
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Seed for every random draw of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving tables and the run manifest.
    #[arg(long, default_value = "patchwork-out")]
    pub out_dir: PathBuf,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// A check ran but missed its tolerance, or the numerics broke down.
    Tolerance(String),
    /// Bad flags, configuration, or files.
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Tolerance(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Tolerance(m) => write!(f, "check failed: {m}"),
            Failure::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl From<patchwork::Error> for Failure {
    fn from(e: patchwork::Error) -> Self {
        match e {
            patchwork::Error::Rollout { .. } | patchwork::Error::Training(_) => Failure::Tolerance(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match &cli.command {
        Command::SpectralCheck(a) => commands::spectral::run(a),
        Command::JitterDemo(a) => commands::jitter::run(a),
        Command::Augment(a) => commands::augment::run(a),
        Command::SimulateSched(a) => commands::sched::run(a),
        Command::RolloutEval(a) => commands::rollout::run(a),
        Command::GenSynthetic(a) => commands::synth::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("patchwork: {f}");
            ExitCode::from(f.code())
        }
    }
}
