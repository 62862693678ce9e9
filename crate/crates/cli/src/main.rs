use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbvqe_cli::{run, Command, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "sbvqe", version, about = "Sideband-circuit VQE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact ground state, gap and bulk invariants.
    ExactGs(Common),
    /// One variational run with tomography and artifacts.
    Vqe(Common),
    /// Variational runs over the t₋ grid.
    Sweep(Common),
    /// Interpolate between two parameter sets at several n̄.
    Interp(Common),
    /// RSS of Pauli-noise models against a reference sweep.
    NoiseStudy(Common),
    /// Four-qubit test-bed circuit and ordering search.
    FixtureA1(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config (a manifest.json from an earlier run also works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shots per energy basis (0 = exact expectation).
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    dump_circuit: bool,
    #[arg(long)]
    save_shots: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::ExactGs(c) => (Command::ExactGs, c),
        Cmd::Vqe(c) => (Command::Vqe, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Interp(c) => (Command::Interp, c),
        Cmd::NoiseStudy(c) => (Command::NoiseStudy, c),
        Cmd::FixtureA1(c) => (Command::FixtureA1, c),
    };
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    };
    let overrides = Overrides {
        seed: common.seed,
        shots: common.shots,
        out_dir: common.out_dir,
        dump_circuit: common.dump_circuit,
        save_shots: common.save_shots,
    };
    match cfg.and_then(|cfg| run(cmd, cfg, &overrides)) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sbvqe {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
