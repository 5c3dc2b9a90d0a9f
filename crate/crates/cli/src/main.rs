use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gld_cli::output::write_atomic;
use gld_cli::presets::PRESETS;
use gld_cli::{parse_config, run_scenario, CliError, ScenarioConfig, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "gld", about = "Ginzburg-Landau-Devonshire ferroelectric solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a configuration file.
    Run { config: PathBuf },
    /// Parse and validate a configuration file without running it.
    CheckConfig { config: PathBuf },
    /// Write the packaged configuration files.
    Presets {
        #[arg(short, long, default_value = "presets")]
        directory: PathBuf,
    },
}

fn load(path: &Path) -> Result<ScenarioConfig, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    parse_config(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_CONFIG
    })
}

fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_scenario(&cfg) {
                Ok(report) => {
                    for f in &report.files {
                        println!("{}", f.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::CheckConfig { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: valid {} configuration", config.display(), cfg.scenario);
                EXIT_OK
            }
            Err(code) => code,
        },
        Command::Presets { directory } => {
            for (name, text) in PRESETS {
                let path = directory.join(name);
                if let Err(e) = write_atomic(&path, text) {
                    eprintln!("error: {}", CliError::Io(e));
                    return EXIT_SOLVER;
                }
                println!("{}", path.display());
            }
            EXIT_OK
        }
    }
}

fn main() -> ExitCode {
    let code = execute(Cli::parse());
    ExitCode::from(code as u8)
}
