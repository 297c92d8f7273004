use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tonelli_cli::commands::{EXIT_OK, EXIT_USAGE};
use tonelli_cli::{run, Command, Flags};

/// Obstacle problems in one dimension: solve, verify, tabulate.
#[derive(Parser)]
#[command(name = "tonelli", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: [output] dir, else ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides [solver] seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Minimize and write solution.csv and energy.txt
    Solve(Common),
    /// Run every check and write report.csv and report.txt
    Verify {
        #[command(flatten)]
        common: Common,
        /// Add EPS at a free node of the minimizer before checking
        #[arg(long, value_name = "EPS", allow_negative_numbers = true)]
        inject_perturbation: Option<f64>,
    },
    /// Constants and the tabulated (k, ε) pipeline
    Theory(Common),
    /// Dini integrals of the obstacle moduli
    Dini(Common),
    /// Verify every point of the [sweep] grid
    Sweep(Common),
    /// SVG plots of the minimizer and the pipeline
    Plot(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let (command, common, inject) = match cli.command {
        Sub::Solve(c) => (Command::Solve, c, None),
        Sub::Verify {
            common,
            inject_perturbation,
        } => (Command::Verify, common, inject_perturbation),
        Sub::Theory(c) => (Command::Theory, c, None),
        Sub::Dini(c) => (Command::Dini, c, None),
        Sub::Sweep(c) => (Command::Sweep, c, None),
        Sub::Plot(c) => (Command::Plot, c, None),
    };
    let flags = Flags {
        out: common.out,
        jobs: common.jobs,
        seed: common.seed,
        inject_perturbation: inject,
    };
    match run(command, &common.scenario, &flags) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
