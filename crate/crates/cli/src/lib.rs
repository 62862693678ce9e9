//! Experiment front end for the sideband VQE simulator: JSON configs, sweeps,
//! noise-model comparison and the four-qubit fixture.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixture;
pub mod output;

use serde_json::Value;

pub use commands::Overrides;
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    ExactGs,
    Vqe,
    Sweep,
    Interp,
    NoiseStudy,
    FixtureA1,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ExactGs => "exact-gs",
            Command::Vqe => "vqe",
            Command::Sweep => "sweep",
            Command::Interp => "interp",
            Command::NoiseStudy => "noise-study",
            Command::FixtureA1 => "fixture-a1",
        }
    }
}

/// Runs `cmd` with `cfg` after applying `overrides`.
pub fn run(cmd: Command, mut cfg: ExperimentConfig, overrides: &Overrides) -> CliResult<Value> {
    overrides.apply(&mut cfg);
    match cmd {
        Command::ExactGs => commands::cmd_exact_gs(&cfg),
        Command::Vqe => commands::cmd_vqe(&cfg),
        Command::Sweep => commands::cmd_sweep(&cfg),
        Command::Interp => commands::cmd_interp(&cfg),
        Command::NoiseStudy => commands::cmd_noise_study(&cfg),
        Command::FixtureA1 => fixture::cmd_fixture_a1(&cfg),
    }
}
