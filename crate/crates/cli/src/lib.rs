//! Scenario runner for the exploration simulator: scenario-file parsing,
//! seeded map generation, and batch trial execution with CSV/PGM output.

pub mod config;
pub mod genmap;
pub mod trials;

pub use config::{parse_config, ConfigError, ScenarioConfig};
pub use genmap::{generate_map, GenMapError};
pub use trials::{run_trials, RunError, TrialSummary};
