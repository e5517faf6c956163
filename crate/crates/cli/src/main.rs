use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cqlite_cli::config::{parse_config, ScenarioConfig};
use cqlite_cli::genmap::generate_map;
use cqlite_cli::trials::run_trials;
use cqlite_core::engine::Policy;

/// Deterministic multi-robot exploration simulator.
#[derive(Parser)]
#[command(name = "cqlite", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, trial) pair of a scenario file.
    Run {
        /// Path to the scenario file.
        scenario: PathBuf,
        /// Override the scenario's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a union-map PGM snapshot every K ticks.
        #[arg(long, value_name = "K")]
        snapshots: Option<usize>,
        /// Suppress per-trial progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Generate a closed map with seeded rectangular obstacles.
    Genmap {
        width: usize,
        height: usize,
        /// Obstacle density in [0, 0.4].
        density: f64,
        seed: u64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario across policies on identical seeds for comparison.
    Compare {
        /// Path to the scenario file.
        scenario: PathBuf,
        /// Override the scenario's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a union-map PGM snapshot every K ticks.
        #[arg(long, value_name = "K")]
        snapshots: Option<usize>,
        /// Suppress per-trial progress lines.
        #[arg(long)]
        quiet: bool,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn load_scenario(
    path: &PathBuf,
    out: Option<PathBuf>,
    snapshots: Option<usize>,
) -> Result<ScenarioConfig, u8> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read scenario {}: {err}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    let mut scenario = match parse_config(&text) {
        Ok(scenario) => scenario,
        Err(err) => {
            eprintln!("error: {}: {err}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    if let Some(out) = out {
        scenario.out_dir = out;
    }
    if snapshots.is_some() {
        scenario.snapshots = snapshots;
    }
    // Scenario paths are relative to the scenario file's directory.
    if scenario.map.is_relative() {
        if let Some(parent) = path.parent() {
            scenario.map = parent.join(&scenario.map);
        }
    }
    Ok(scenario)
}

fn execute(scenario: &ScenarioConfig, quiet: bool) -> u8 {
    match run_trials(scenario, quiet) {
        Ok(summary) => {
            if !quiet {
                for policy_summary in &summary.per_policy {
                    let expl = policy_summary.aggregate_of("exploration_pct");
                    let bytes = policy_summary.aggregate_of("bytes_total");
                    eprintln!(
                        "{}: exploration {:.1} ± {:.1} %, payload {:.0} ± {:.0} bytes",
                        policy_summary.policy, expl.mean, expl.stddev, bytes.mean, bytes.stddev
                    );
                }
                eprintln!(
                    "wrote {} files under {}",
                    summary.files_written.len(),
                    summary.out_dir.display()
                );
            }
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            out,
            snapshots,
            quiet,
        } => match load_scenario(&scenario, out, snapshots) {
            Ok(config) => execute(&config, quiet),
            Err(code) => code,
        },
        Command::Compare {
            scenario,
            out,
            snapshots,
            quiet,
        } => match load_scenario(&scenario, out, snapshots) {
            Ok(mut config) => {
                if config.policies.len() < 2 {
                    config.policies =
                        vec![Policy::Cqlite, Policy::GreedyFrontier, Policy::FullShare];
                }
                execute(&config, quiet)
            }
            Err(code) => code,
        },
        Command::Genmap {
            width,
            height,
            density,
            seed,
            out,
        } => match generate_map(width, height, density, seed) {
            Ok(text) => match out {
                Some(path) => match std::fs::write(&path, text) {
                    Ok(()) => 0,
                    Err(err) => {
                        eprintln!("error: cannot write {}: {err}", path.display());
                        EXIT_RUNTIME
                    }
                },
                None => {
                    print!("{text}");
                    0
                }
            },
            Err(err) => {
                eprintln!("error: {err}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code)
}
