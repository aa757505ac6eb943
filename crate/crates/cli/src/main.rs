//! `rvs`: experiment harness for reparameterized volume sampling.
//!
//! Every command prints `# config {json}` first; rerunning with those values
//! reproduces the output bitwise. Exit codes: 0 success, 1 usage, 2 failed
//! numerical check, 3 divergence.

mod gradcheck;
mod invert;
mod output;
mod recon;
mod scene;
mod variance;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rvs_core::RvsError;

#[derive(Parser)]
#[command(
    name = "rvs",
    version,
    about = "Reparameterized volume sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimator variance against the number of samples, as CSV.
    Variance(variance::Args),
    /// Finite-difference check of every analytic gradient, as JSON.
    Gradcheck(gradcheck::Args),
    /// Reconstruction demos: per-step loss CSV plus final model JSON.
    Recon(recon::Args),
    /// Sample positions for given uniforms on a discretized field.
    Invert(invert::Args),
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Check(String),
    Diverged(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Check(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl From<RvsError> for Failure {
    fn from(e: RvsError) -> Self {
        match e {
            RvsError::Divergence { .. } => Failure::Diverged(e.into()),
            other => Failure::Usage(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Variance(a) => variance::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Recon(a) => recon::run(a),
        Command::Invert(a) => invert::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
                Failure::Diverged(e) => eprintln!("diverged: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
