//! Configuration, scenario drivers and output writers behind the `gld`
//! command-line tool.

pub mod config;
pub mod output;
pub mod presets;
pub mod scenarios;
pub mod signal;

use gld_core::GldError;
use thiserror::Error;

pub use config::{parse_config, ConfigErrors, ScenarioConfig, ScenarioKind};
pub use scenarios::{run_scenario, ScenarioReport};
pub use signal::{bias_at, BiasSignal};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),

    #[error(transparent)]
    Solver(#[from] GldError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(GldError::StabilityViolation { .. }) => EXIT_ASSERTION,
            CliError::Solver(GldError::Config(_)) => EXIT_CONFIG,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }
}
