//! Flat `key = value` scenario files mapping onto simulation configs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use cqlite_core::engine::{Policy, SimConfig};
use cqlite_core::learner::{LearnerParams, RemoteMergeRule};
use cqlite_core::planner::ControllerParams;
use cqlite_core::world::{GroundTruthGrid, SensorParams};
use cqlite_core::Cell;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: malformed line (expected \"key = value\")")]
    MalformedLine { line: usize },
    #[error("duplicate key {key:?} on lines {first} and {second}")]
    DuplicateKey {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("line {line}: cannot parse {key} value {value:?}")]
    Unparsable {
        line: usize,
        key: String,
        value: String,
    },
    #[error("line {line}: {key} {reason}")]
    OutOfRange {
        line: usize,
        key: String,
        reason: String,
    },
}

/// A parsed scenario: every simulation parameter plus the trial batch shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub map: PathBuf,
    pub robots: usize,
    pub seed: u64,
    pub trials: usize,
    pub policies: Vec<Policy>,
    pub out_dir: PathBuf,
    pub t_max: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub sigma: f64,
    pub kp: f64,
    pub ki: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub r_s: f64,
    pub r_is: f64,
    pub r_c: f64,
    pub ray_count: usize,
    pub min_cluster: usize,
    pub resolution: f64,
    pub ssim_window: usize,
    pub epsilon: f64,
    pub drop_probability: f64,
    pub snapshots: Option<usize>,
    pub starts: Option<Vec<Cell>>,
}

impl ScenarioConfig {
    /// A scenario with every optional key at its documented default.
    pub fn with_defaults(map: PathBuf, robots: usize, seed: u64) -> Self {
        Self {
            map,
            robots,
            seed,
            trials: 1,
            policies: vec![Policy::Cqlite],
            out_dir: PathBuf::from("out"),
            t_max: 2000,
            alpha: 0.6,
            gamma: 0.95,
            lambda: 2.0,
            rho: 1.0,
            sigma: 0.1,
            kp: 2.0,
            ki: 0.5,
            v_max: 0.5,
            w_max: 0.785,
            r_s: 15.0,
            r_is: 1.0,
            r_c: 40.0,
            ray_count: 256,
            min_cluster: 3,
            resolution: 0.1,
            ssim_window: 8,
            epsilon: 0.0,
            drop_probability: 0.0,
            snapshots: None,
            starts: None,
        }
    }

    /// Builds the per-trial engine config for one (seed, policy) pair.
    pub fn to_sim_config(
        &self,
        grid: Arc<GroundTruthGrid>,
        seed: u64,
        policy: Policy,
    ) -> SimConfig {
        SimConfig {
            grid,
            robots: self.robots,
            start_cells: self.starts.clone(),
            learner: LearnerParams {
                alpha: self.alpha,
                gamma: self.gamma,
                lambda_step: self.lambda,
                rho: self.rho,
                sigma: self.sigma,
                r_c: self.r_c,
            },
            sensor: SensorParams::new(self.r_s, self.ray_count),
            controller: ControllerParams::new(self.kp, self.ki, self.v_max, self.w_max),
            r_is_m: self.r_is,
            r_c_m: self.r_c,
            min_cluster: self.min_cluster,
            t_max: self.t_max,
            seed,
            policy,
            ssim_window: self.ssim_window,
            epsilon: self.epsilon,
            drop_probability: self.drop_probability,
            remote_merge: RemoteMergeRule::default(),
        }
    }

    /// Canonical text form; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("map = {}\n", self.map.display()));
        out.push_str(&format!("robots = {}\n", self.robots));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("trials = {}\n", self.trials));
        out.push_str(&format!(
            "policies = {}\n",
            self.policies
                .iter()
                .map(|p| p.name())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        out.push_str(&format!("t_max = {}\n", self.t_max));
        out.push_str(&format!("alpha = {}\n", self.alpha));
        out.push_str(&format!("gamma = {}\n", self.gamma));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("rho = {}\n", self.rho));
        out.push_str(&format!("sigma = {}\n", self.sigma));
        out.push_str(&format!("kp = {}\n", self.kp));
        out.push_str(&format!("ki = {}\n", self.ki));
        out.push_str(&format!("v_max = {}\n", self.v_max));
        out.push_str(&format!("w_max = {}\n", self.w_max));
        out.push_str(&format!("r_s = {}\n", self.r_s));
        out.push_str(&format!("r_is = {}\n", self.r_is));
        out.push_str(&format!("r_c = {}\n", self.r_c));
        out.push_str(&format!("ray_count = {}\n", self.ray_count));
        out.push_str(&format!("min_cluster = {}\n", self.min_cluster));
        out.push_str(&format!("resolution = {}\n", self.resolution));
        out.push_str(&format!("ssim_window = {}\n", self.ssim_window));
        out.push_str(&format!("epsilon = {}\n", self.epsilon));
        out.push_str(&format!("drop_probability = {}\n", self.drop_probability));
        if let Some(k) = self.snapshots {
            out.push_str(&format!("snapshots = {k}\n"));
        }
        if let Some(starts) = &self.starts {
            let cells: Vec<String> = starts.iter().map(|c| format!("{},{}", c.x, c.y)).collect();
            out.push_str(&format!("starts = {}\n", cells.join(";")));
        }
        out
    }
}

const KNOWN_KEYS: &[&str] = &[
    "map",
    "robots",
    "seed",
    "trials",
    "policies",
    "out_dir",
    "t_max",
    "alpha",
    "gamma",
    "lambda",
    "rho",
    "sigma",
    "kp",
    "ki",
    "v_max",
    "w_max",
    "r_s",
    "r_is",
    "r_c",
    "ray_count",
    "min_cluster",
    "resolution",
    "ssim_window",
    "epsilon",
    "drop_probability",
    "snapshots",
    "starts",
];

/// Parses scenario text: one `key = value` per line, `#` comments, blank
/// lines ignored. Unknown and duplicate keys are rejected with line numbers.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine { line: line_no });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line: line_no, key });
        }
        if let Some((first, _)) = seen.get(&key) {
            return Err(ConfigError::DuplicateKey {
                key,
                first: *first,
                second: line_no,
            });
        }
        seen.insert(key, (line_no, value));
    }

    let take = |key: &'static str| seen.get(key).cloned();
    let require = |key: &'static str| take(key).ok_or(ConfigError::MissingKey(key));

    fn parse_as<T: std::str::FromStr>(
        key: &str,
        line: usize,
        value: &str,
    ) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::Unparsable {
            line,
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    let (map_line, map) = require("map")?;
    let _ = map_line;
    let (robots_line, robots_raw) = require("robots")?;
    let robots: usize = parse_as("robots", robots_line, &robots_raw)?;
    let (seed_line, seed_raw) = require("seed")?;
    let seed: u64 = parse_as("seed", seed_line, &seed_raw)?;

    let mut config = ScenarioConfig::with_defaults(PathBuf::from(map), robots, seed);

    macro_rules! opt_num {
        ($key:literal, $field:ident, $ty:ty) => {
            if let Some((line, value)) = take($key) {
                config.$field = parse_as::<$ty>($key, line, &value)?;
            }
        };
    }
    opt_num!("trials", trials, usize);
    opt_num!("t_max", t_max, usize);
    opt_num!("alpha", alpha, f64);
    opt_num!("gamma", gamma, f64);
    opt_num!("lambda", lambda, f64);
    opt_num!("rho", rho, f64);
    opt_num!("sigma", sigma, f64);
    opt_num!("kp", kp, f64);
    opt_num!("ki", ki, f64);
    opt_num!("v_max", v_max, f64);
    opt_num!("w_max", w_max, f64);
    opt_num!("r_s", r_s, f64);
    opt_num!("r_is", r_is, f64);
    opt_num!("r_c", r_c, f64);
    opt_num!("ray_count", ray_count, usize);
    opt_num!("min_cluster", min_cluster, usize);
    opt_num!("resolution", resolution, f64);
    opt_num!("ssim_window", ssim_window, usize);
    opt_num!("epsilon", epsilon, f64);
    opt_num!("drop_probability", drop_probability, f64);

    if let Some((_, value)) = take("out_dir") {
        config.out_dir = PathBuf::from(value);
    }
    if let Some((line, value)) = take("snapshots") {
        config.snapshots = Some(parse_as("snapshots", line, &value)?);
    }
    if let Some((line, value)) = take("policies") {
        let mut policies = Vec::new();
        for token in value.split(',') {
            let token = token.trim();
            policies.push(
                token
                    .parse::<Policy>()
                    .map_err(|_| ConfigError::Unparsable {
                        line,
                        key: "policies".into(),
                        value: token.into(),
                    })?,
            );
        }
        if policies.is_empty() {
            return Err(ConfigError::Unparsable {
                line,
                key: "policies".into(),
                value,
            });
        }
        config.policies = policies;
    }
    if let Some((line, value)) = take("starts") {
        let mut cells = Vec::new();
        for pair in value.split(';') {
            let Some((x, y)) = pair.split_once(',') else {
                return Err(ConfigError::Unparsable {
                    line,
                    key: "starts".into(),
                    value: pair.into(),
                });
            };
            cells.push(Cell::new(
                parse_as("starts", line, x.trim())?,
                parse_as("starts", line, y.trim())?,
            ));
        }
        config.starts = Some(cells);
    }

    validate(&config, &seen)?;
    Ok(config)
}

fn validate(
    config: &ScenarioConfig,
    seen: &BTreeMap<String, (usize, String)>,
) -> Result<(), ConfigError> {
    let line_of = |key: &str| seen.get(key).map(|(l, _)| *l).unwrap_or(0);
    let check = |ok: bool, key: &str, reason: &str| -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(ConfigError::OutOfRange {
                line: line_of(key),
                key: key.into(),
                reason: reason.into(),
            })
        }
    };
    check(config.robots >= 1, "robots", "must be at least 1")?;
    check(config.trials >= 1, "trials", "must be at least 1")?;
    check(config.t_max >= 1, "t_max", "must be at least 1")?;
    check(
        config.alpha > 0.0 && config.alpha <= 1.0,
        "alpha",
        "must lie in (0, 1]",
    )?;
    check(
        (0.0..1.0).contains(&config.gamma),
        "gamma",
        "must lie in [0, 1)",
    )?;
    check(config.lambda >= 0.0, "lambda", "must be nonnegative")?;
    check(config.rho >= 0.0, "rho", "must be nonnegative")?;
    check(config.sigma >= 0.0, "sigma", "must be nonnegative")?;
    check(config.kp > 0.0, "kp", "must be positive")?;
    check(config.ki >= 0.0, "ki", "must be nonnegative")?;
    check(config.v_max > 0.0, "v_max", "must be positive")?;
    check(config.w_max >= 0.0, "w_max", "must be nonnegative")?;
    check(config.r_s > 0.0, "r_s", "must be positive")?;
    check(config.r_is > 0.0, "r_is", "must be positive")?;
    check(config.r_c > 0.0, "r_c", "must be positive")?;
    check(config.ray_count >= 8, "ray_count", "needs at least 8 rays")?;
    check(config.min_cluster >= 1, "min_cluster", "must be at least 1")?;
    check(config.resolution > 0.0, "resolution", "must be positive")?;
    check(config.ssim_window >= 2, "ssim_window", "must be at least 2")?;
    check(
        (0.0..=1.0).contains(&config.epsilon),
        "epsilon",
        "must lie in [0, 1]",
    )?;
    check(
        (0.0..=1.0).contains(&config.drop_probability),
        "drop_probability",
        "must lie in [0, 1]",
    )?;
    if let Some(k) = config.snapshots {
        check(k >= 1, "snapshots", "must be at least 1")?;
    }
    if let Some(starts) = &config.starts {
        check(
            starts.len() == config.robots,
            "starts",
            "must list one cell per robot",
        )?;
    }
    Ok(())
}
