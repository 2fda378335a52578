use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crowdsim::harness::{execute, exit_code, Command, RunOptions};
use crowdsim::scenario::Overrides;

#[derive(Parser)]
#[command(name = "crowdsim", version, about = "Reflected-SDE crowd evacuation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the ensemble and write trajectories and metadata.
    Simulate(Args),
    /// Solve and dump the navigation field.
    Navfield(Args),
    /// Check the reflected Brownian motion law against the half-normal CDF.
    VerifyReflect(Args),
    /// Paired-noise perturbation experiment.
    VerifyStability(Args),
    /// Strong error under coupled dyadic refinement.
    VerifyConvergence(Args),
    /// Print the dimensionless groups and kappa.
    Nondim(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Dyadic level n (2^n steps).
    #[arg(long)]
    level: Option<u32>,
    /// Ensemble size.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Navfield(a) => (Command::Navfield, a),
        Cmd::VerifyReflect(a) => (Command::VerifyReflect, a),
        Cmd::VerifyStability(a) => (Command::VerifyStability, a),
        Cmd::VerifyConvergence(a) => (Command::VerifyConvergence, a),
        Cmd::Nondim(a) => (Command::Nondim, a),
    };
    let opts = RunOptions {
        scenario: args.scenario,
        overrides: Overrides {
            seed: args.seed,
            level: args.level,
            ensemble: args.ensemble,
            out: args.out,
        },
        workers: args.workers,
    };
    let outcome = execute(cmd, &opts);
    match &outcome {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", report.summary);
            for a in &report.artifacts {
                println!("wrote {}", a.display());
            }
        }
        Err(e) => eprintln!("crowdsim {}: {e}", cmd.name()),
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
