//! `tenshape`: estimate the shape of strut-and-cable structures from
//! per-strut inclination angles, and export the traces to prove it.

mod commands;
mod error;
mod outputs;
mod report;
mod settings;
mod sources;

use clap::{Parser, Subcommand};

use commands::bench::BenchArgs;
use commands::gen::GenArgs;
use commands::verify::VerifyArgs;
use settings::{CommonArgs, RunExtras};

#[derive(Parser)]
#[command(
    name = "tenshape",
    version,
    about = "Shape estimation harness for strut-and-cable structures",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 I/O error, \
                  4 divergence, 5 verification mismatch."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one estimation and export its report, trace, and frames.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        extras: RunExtras,
    },
    /// Run N estimations from distinct random initialisations and report
    /// converged-energy statistics.
    Restarts {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of runs; seeds are seed, seed+1, ...
        #[arg(long)]
        runs: usize,
    },
    /// Track a time-varying sensor stream, snapshotting a frame at every
    /// sensor refresh.
    Perturb {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        extras: RunExtras,
    },
    /// Time full-batch descent steps on a structure.
    Bench(BenchArgs),
    /// Recompute a report's numbers from its trace files.
    Verify(VerifyArgs),
    /// Generate fixture structures, sensor streams, and ground truth.
    Gen(GenArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate { common, extras } => commands::run::run("estimate", common, extras),
        Command::Restarts { common, runs } => commands::restarts::run(common, *runs),
        Command::Perturb { common, extras } => commands::run::run("perturb", common, extras),
        Command::Bench(args) => commands::bench::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Gen(args) => commands::gen::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
