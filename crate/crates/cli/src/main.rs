mod memory;
mod output;
mod sim;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Memory accounting, compressed mixed-precision training and parallel
/// training simulation for pruned networks.
#[derive(Parser, Debug)]
#[command(name = "samo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output CSV path (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model-state bytes with and without compression over a sparsity range.
    MemoryModel(memory::MemoryArgs),
    /// Train an MLP on compressed state, optionally checking it against the
    /// dense masked reference.
    Train(train::TrainArgs),
    /// Batch-time breakdown of one parallel training scenario.
    Simulate(sim::SimulateArgs),
    /// Strong-scaling sweep of a scenario over GPU counts.
    Sweep(sim::SweepArgs),
}

/// Process exit statuses.
pub mod status {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const VERIFY_FAILED: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                status::USAGE
            } else {
                status::OK
            });
        }
    };
    let result = match cli.command {
        Command::MemoryModel(a) => memory::run(a),
        Command::Train(a) => train::run(a),
        Command::Simulate(a) => sim::run_simulate(a),
        Command::Sweep(a) => sim::run_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<samo_core::Error>() {
                Some(samo_core::Error::Infeasible(_)) => status::INFEASIBLE,
                _ => status::USAGE,
            };
            ExitCode::from(code)
        }
    }
}
