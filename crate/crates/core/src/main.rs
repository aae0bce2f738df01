use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bridgemark::cli::{run, Mode};

#[derive(Parser)]
#[command(name = "bridgemark", version, about = "Guided diffusion bridges for stochastic landmark dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "output")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate forward trajectories and noisy final configurations
    Simulate(RunArgs),
    /// Sample bridges between an initial and an observed final configuration
    Match(RunArgs),
    /// Estimate a template from several observed configurations
    Template(RunArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Match(a) => (Mode::Match, a),
        Command::Template(a) => (Mode::Template, a),
    };
    match run(mode, &args.config, args.seed, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bridgemark: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
