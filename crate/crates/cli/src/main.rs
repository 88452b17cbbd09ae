//! `tbtomo`: simulate time-bin homodyne tomography datasets and reconstruct
//! the temporal density matrix from them.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::{parse_detunings, RunConfig};

#[derive(Parser)]
#[command(name = "tbtomo", version, about = "Time-bin temporal-mode tomography of heralded single photons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write autocorrelation matrices for every detuning plus a manifest.
    Simulate(RunArgs),
    /// Reconstruct ρ from a dataset directory.
    Reconstruct {
        dir: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Homodyne-only analysis of the Δω = 0 matrix in a dataset directory.
    Analyze {
        dir: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Simulate, reconstruct and compare against the generating state.
    Roundtrip(RunArgs),
    /// Check the forward model and the element solver against brute force.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trace count per detuning, or `exact`.
    #[arg(long)]
    samples: Option<String>,
    /// Comma-separated LO detunings in MHz.
    #[arg(long, allow_hyphen_values = true)]
    detunings: Option<String>,
    /// `2pi` (Δω = 2π·ν) or `direct` (values already angular).
    #[arg(long)]
    angular_convention: Option<String>,
    /// Report the PSD-projected matrix.
    #[arg(long)]
    psd: bool,
    #[arg(long)]
    phase_threshold: Option<f64>,
    /// Reference row: bin index or `auto`.
    #[arg(long)]
    m: Option<String>,
    /// Heralding efficiency.
    #[arg(long)]
    eta: Option<f64>,
    /// Also write raw traces: `none`, `csv` or `bin`.
    #[arg(long)]
    traces: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let usage = |e: tbtomo::Error| CliError::Usage(e.to_string());
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(s) = &self.samples {
            c.samples = s.parse().map_err(usage)?;
        }
        if let Some(d) = &self.detunings {
            c.detunings_mhz = parse_detunings(d)?;
        }
        if let Some(a) = &self.angular_convention {
            c.angular_convention = a.parse()?;
        }
        if self.psd {
            c.psd = true;
        }
        if let Some(t) = self.phase_threshold {
            c.phase_threshold = t;
        }
        if let Some(m) = &self.m {
            c.m = m.parse().map_err(usage)?;
        }
        if let Some(e) = self.eta {
            c.eta = e;
        }
        if let Some(t) = &self.traces {
            c.traces = t.parse()?;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a.resolve()?),
        Command::Reconstruct { dir, args } => commands::reconstruct_dir(&dir, &args.resolve()?),
        Command::Analyze { dir, args } => commands::analyze(&dir, &args.resolve()?),
        Command::Roundtrip(a) => commands::roundtrip(&a.resolve()?),
        Command::Oracle(a) => commands::oracle(&a.resolve()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
