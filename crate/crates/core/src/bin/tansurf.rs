use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tansurf::experiments::{self, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tansurf", version, about = "Surface calculus checks and surface Stokes experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Io {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json, tables/ and fields/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Sub {
    /// Verify the identity catalog at sample points.
    Verify(Io),
    /// Solve a manufactured problem on each configured level.
    Solve(Io),
    /// Convergence study with observed orders.
    Convergence(Io),
    /// Sweep of the augmentation parameter.
    TauSweep(Io),
    /// Discrete Korn and inf-sup estimates.
    Constants(Io),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, io) = match cli.command {
        Sub::Verify(io) => (Command::Verify, io),
        Sub::Solve(io) => (Command::Solve, io),
        Sub::Convergence(io) => (Command::Convergence, io),
        Sub::TauSweep(io) => (Command::TauSweep, io),
        Sub::Constants(io) => (Command::Constants, io),
    };
    match run(command, &io) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: one or more checks are outside tolerance; see {}", command.name(), io.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}: {e}", command.name());
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, io: &Io) -> Result<bool, experiments::ExperimentError> {
    let text = std::fs::read_to_string(&io.config)?;
    let cfg = ExperimentConfig::load(&text, command)?;
    let (report, artifacts) = experiments::execute(&cfg, experiments::threads_from_env())?;
    for path in experiments::write_outputs(&io.out, &report, &artifacts)? {
        println!("{}", path.display());
    }
    Ok(report.passed)
}
