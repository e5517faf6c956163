//! Batch trial execution: paired seeds across policies, CSV and PGM
//! emission, and mean/stddev aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cqlite_core::engine::{MetricsReport, Policy, SimState};
use cqlite_core::world::{load_map_with_resolution, load_pgm, GroundTruthGrid};
use thiserror::Error;

use crate::config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read map {path}: {source}")]
    MapRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("map {path} is invalid: {source}")]
    MapParse {
        path: PathBuf,
        source: cqlite_core::world::WorldError,
    },
    #[error("invalid simulation setup: {0}")]
    Engine(#[from] cqlite_core::engine::EngineError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Config-class errors exit with 1, runtime failures with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::MapRead { .. } | RunError::MapParse { .. } | RunError::Engine(_) => 1,
            RunError::Write { .. } => 2,
        }
    }
}

/// Headline metrics of one trial, kept alongside the full report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricVector {
    pub iterations: f64,
    pub mapping_time_s: f64,
    pub total_path_m: f64,
    pub exploration_pct: f64,
    pub overlap_pct: f64,
    pub ssim: f64,
    pub bytes_total: f64,
    pub merge_ticks: f64,
}

impl MetricVector {
    fn of(report: &MetricsReport) -> Self {
        Self {
            iterations: report.iterations as f64,
            mapping_time_s: report.mapping_time_s,
            total_path_m: report.total_path_m,
            exploration_pct: report.final_exploration_pct,
            overlap_pct: report.final_overlap_pct,
            ssim: report.final_ssim,
            bytes_total: report.bytes_total as f64,
            merge_ticks: report.merge_ticks as f64,
        }
    }

    pub const FIELDS: [&'static str; 8] = [
        "iterations",
        "mapping_time_s",
        "total_path_m",
        "exploration_pct",
        "overlap_pct",
        "ssim",
        "bytes_total",
        "merge_ticks",
    ];

    pub fn get(&self, field: &str) -> f64 {
        match field {
            "iterations" => self.iterations,
            "mapping_time_s" => self.mapping_time_s,
            "total_path_m" => self.total_path_m,
            "exploration_pct" => self.exploration_pct,
            "overlap_pct" => self.overlap_pct,
            "ssim" => self.ssim,
            "bytes_total" => self.bytes_total,
            "merge_ticks" => self.merge_ticks,
            other => panic!("unknown metric field {other}"),
        }
    }
}

/// Mean and sample standard deviation of one metric across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub stddev: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, stddev }
}

/// All trials of one policy on the shared seed sequence.
#[derive(Debug)]
pub struct PolicySummary {
    pub policy: Policy,
    pub reports: Vec<MetricsReport>,
    pub metrics: Vec<MetricVector>,
}

impl PolicySummary {
    pub fn aggregate_of(&self, field: &str) -> Aggregate {
        let values: Vec<f64> = self.metrics.iter().map(|m| m.get(field)).collect();
        aggregate(&values)
    }
}

/// Outcome of a whole scenario run.
#[derive(Debug)]
pub struct TrialSummary {
    pub per_policy: Vec<PolicySummary>,
    pub out_dir: PathBuf,
    pub files_written: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| RunError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| RunError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a world from either the ASCII grid format or a binary PGM (P5).
fn load_world(path: &Path, resolution: f64) -> Result<GroundTruthGrid, RunError> {
    let bytes = fs::read(path).map_err(|source| RunError::MapRead {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = if bytes.starts_with(b"P5") {
        load_pgm(&bytes, resolution)
    } else {
        load_map_with_resolution(&String::from_utf8_lossy(&bytes), resolution)
    };
    parsed.map_err(|source| RunError::MapParse {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every (policy, trial) pair of the scenario on paired seeds
/// (base seed + trial index), writing one per-tick CSV and one final map
/// PGM per trial plus `summary.csv` and `aggregates.csv`.
pub fn run_trials(scenario: &ScenarioConfig, quiet: bool) -> Result<TrialSummary, RunError> {
    let grid = Arc::new(load_world(&scenario.map, scenario.resolution)?);

    let mut files_written = Vec::new();
    let mut per_policy = Vec::new();
    let mut summary_rows = vec![MetricsReport::summary_csv_header().to_string()];

    for &policy in &scenario.policies {
        let mut reports = Vec::new();
        for trial in 0..scenario.trials {
            let seed = scenario.seed + trial as u64;
            let config = scenario.to_sim_config(grid.clone(), seed, policy);
            let mut state = SimState::new(config)?;
            while !state.is_terminated() {
                state.step();
                if let Some(every) = scenario.snapshots {
                    if state.tick() % every == 0 {
                        let path = scenario.out_dir.join(format!(
                            "snapshots/{}_seed{}_tick{:05}.pgm",
                            policy.name(),
                            seed,
                            state.tick()
                        ));
                        write_file(&path, &state.union_map().to_pgm())?;
                        files_written.push(path);
                    }
                }
            }

            let pgm_path =
                scenario
                    .out_dir
                    .join(format!("{}_seed{}_final.pgm", policy.name(), seed));
            write_file(&pgm_path, &state.union_map().to_pgm())?;
            files_written.push(pgm_path);

            let report = state.into_report();
            let csv_path = scenario
                .out_dir
                .join(format!("{}_seed{}.csv", policy.name(), seed));
            write_file(&csv_path, report.tick_csv().as_bytes())?;
            files_written.push(csv_path);

            summary_rows.push(report.summary_csv_row());
            if !quiet {
                eprintln!(
                    "{} seed {}: {} iterations, {:.1}% explored, {} bytes",
                    policy.name(),
                    seed,
                    report.iterations,
                    report.final_exploration_pct,
                    report.bytes_total
                );
            }
            reports.push(report);
        }
        let metrics = reports.iter().map(MetricVector::of).collect();
        per_policy.push(PolicySummary {
            policy,
            reports,
            metrics,
        });
    }

    let summary_path = scenario.out_dir.join("summary.csv");
    write_file(&summary_path, (summary_rows.join("\n") + "\n").as_bytes())?;
    files_written.push(summary_path);

    let mut agg_rows = vec!["policy,metric,mean,stddev".to_string()];
    for policy_summary in &per_policy {
        for field in MetricVector::FIELDS {
            let agg = policy_summary.aggregate_of(field);
            agg_rows.push(format!(
                "{},{},{},{}",
                policy_summary.policy, field, agg.mean, agg.stddev
            ));
        }
    }
    let agg_path = scenario.out_dir.join("aggregates.csv");
    write_file(&agg_path, (agg_rows.join("\n") + "\n").as_bytes())?;
    files_written.push(agg_path);

    Ok(TrialSummary {
        per_policy,
        out_dir: scenario.out_dir.clone(),
        files_written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_matches_hand_arithmetic() {
        let agg = aggregate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(agg.mean, 2.5);
        // Sample stddev of {1,2,3,4} = sqrt(5/3).
        assert!((agg.stddev - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let single = aggregate(&[7.0]);
        assert_eq!(single.mean, 7.0);
        assert_eq!(single.stddev, 0.0);
    }
}
