//! The per-robot Q-table: coverage-biased reward, Q-value update, argmax
//! action selection, remote-update merging, and convergence diagnostics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontier::{overlap_probability, ExploredSet, FrontierState, StateId};
use crate::network::RobotId;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("reward is not finite")]
    NonFiniteReward,
    #[error("remote Q-value is not finite")]
    NonFiniteRemote,
    #[error("no candidate actions available")]
    NoCandidates,
    #[error("delta at index {index} is {value}, outside [0, 1]")]
    DeltaOutOfRange { index: usize, value: f64 },
    #[error("confidence must lie in (0, 1), got {0}")]
    BadConfidence(f64),
}

/// How a Q-value received from a peer lands in the local table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemoteMergeRule {
    /// Last writer wins (per-link FIFO order).
    #[default]
    Overwrite,
    /// Keep the larger of local and remote.
    Max,
}

/// Learning-rate, discount, and reward-shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerParams {
    /// Learning rate, in (0, 1].
    pub alpha: f64,
    /// Discount factor, in [0, 1).
    pub gamma: f64,
    /// Step cost per meter of planned path.
    pub lambda_step: f64,
    /// Weight of the overlap-avoidance bonus.
    pub rho: f64,
    /// Weight of the communication-range term.
    pub sigma: f64,
    /// Communication range in meters (enters the reward scaled by sigma).
    pub r_c: f64,
}

impl LearnerParams {
    pub fn validate(&self) {
        assert!(self.alpha > 0.0 && self.alpha <= 1.0, "alpha in (0,1]");
        assert!(self.gamma >= 0.0 && self.gamma < 1.0, "gamma in [0,1)");
        assert!(self.rho >= 0.0 && self.sigma >= 0.0);
    }
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            gamma: 0.95,
            lambda_step: 2.0,
            rho: 1.0,
            sigma: 0.1,
            r_c: 40.0,
        }
    }
}

/// Sparse table of Q-values keyed by frontier state. Absent keys read as
/// zero; the table starts empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    owner: RobotId,
    values: BTreeMap<StateId, f64>,
    version: u64,
}

impl QTable {
    pub fn new(owner: RobotId) -> Self {
        Self {
            owner,
            values: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn owner(&self) -> RobotId {
        self.owner
    }

    pub fn get(&self, id: StateId) -> f64 {
        self.values.get(&id).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, id: StateId) -> bool {
        self.values.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.values.iter().map(|(id, q)| (*id, *q))
    }

    /// Applies the Q-update at `s`, reading the next-state value from the
    /// table (absent reads as zero). Returns the new value.
    pub fn q_update(
        &mut self,
        s: StateId,
        reward: f64,
        s_next: Option<StateId>,
        params: &LearnerParams,
    ) -> Result<f64, LearnerError> {
        let next = s_next.map(|id| self.get(id)).unwrap_or(0.0);
        self.q_update_with_next(s, reward, next, params)
    }

    /// Applies the Q-update at `s` with an explicitly supplied
    /// best-next-action value (the engine computes it over the currently
    /// known frontier candidates).
    pub fn q_update_with_next(
        &mut self,
        s: StateId,
        reward: f64,
        next_max: f64,
        params: &LearnerParams,
    ) -> Result<f64, LearnerError> {
        if !reward.is_finite() {
            return Err(LearnerError::NonFiniteReward);
        }
        params.validate();
        let updated = bellman_update(self.get(s), reward, next_max, params.alpha, params.gamma);
        self.values.insert(s, updated);
        self.version += 1;
        Ok(updated)
    }

    /// Overwrites one entry with a value received from a peer
    /// (last-writer-wins over the per-link FIFO order).
    pub fn apply_remote(&mut self, s: StateId, value: f64) -> Result<(), LearnerError> {
        self.apply_remote_with_rule(s, value, RemoteMergeRule::Overwrite)
    }

    /// Applies a received value under the configured merge rule.
    pub fn apply_remote_with_rule(
        &mut self,
        s: StateId,
        value: f64,
        rule: RemoteMergeRule,
    ) -> Result<(), LearnerError> {
        if !value.is_finite() {
            return Err(LearnerError::NonFiniteRemote);
        }
        let merged = match rule {
            RemoteMergeRule::Overwrite => value,
            RemoteMergeRule::Max => self.values.get(&s).copied().unwrap_or(0.0).max(value),
        };
        self.values.insert(s, merged);
        self.version += 1;
        Ok(())
    }

    /// Snapshot as CSV: `state_id,x,y,q`, one row per entry in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state_id,x,y,q\n");
        for (id, q) in self.iter() {
            let cell = id.cell();
            out.push_str(&format!("{},{},{},{}\n", id.0, cell.x, cell.y, q));
        }
        out
    }
}

/// The core value-update arithmetic:
/// `Q' = (1 - alpha) * Q + alpha * (r + gamma * next_max)`.
pub fn bellman_update(prior: f64, reward: f64, next_max: f64, alpha: f64, gamma: f64) -> f64 {
    (1.0 - alpha) * prior + alpha * (reward + gamma * next_max)
}

/// Coverage-biased reward for steering toward a candidate frontier.
///
/// Already-explored states cost the (distance-scaled) step penalty; novel
/// states earn the step bonus minus the current value estimate, plus an
/// overlap-avoidance bonus and a communication-range term. The step weight
/// is `lambda_step` per meter of the planned path.
pub fn compute_reward(
    state: &FrontierState,
    explored: &ExploredSet,
    q_current: f64,
    params: &LearnerParams,
    r_is_m: f64,
    resolution: f64,
    path_len_m: f64,
) -> f64 {
    let lambda = params.lambda_step * path_len_m;
    if explored.contains(state.id) {
        return -lambda;
    }
    let p_overlap = overlap_probability(state.centroid, explored, r_is_m, resolution);
    lambda - q_current + params.rho * (1.0 - p_overlap) + params.sigma * params.r_c
}

/// A candidate action for `select_action`: a frontier state, its freshly
/// computed Q-value, and its estimated traversal time for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCandidate {
    pub id: StateId,
    pub q: f64,
    pub est_time_s: f64,
}

/// Deterministic argmax: highest Q, ties broken by smaller estimated
/// traversal time, then by ascending state id.
pub fn select_action(candidates: &[ActionCandidate]) -> Result<StateId, LearnerError> {
    candidates
        .iter()
        .max_by(|a, b| {
            a.q.total_cmp(&b.q)
                .then(b.est_time_s.total_cmp(&a.est_time_s))
                .then(b.id.cmp(&a.id))
        })
        .map(|c| c.id)
        .ok_or(LearnerError::NoCandidates)
}

/// Mean squared difference over the union of both tables' keys, absent
/// entries reading as zero.
pub fn q_table_mse(a: &QTable, b: &QTable) -> f64 {
    let keys: std::collections::BTreeSet<StateId> = a
        .iter()
        .map(|(id, _)| id)
        .chain(b.iter().map(|(id, _)| id))
        .collect();
    if keys.is_empty() {
        return 0.0;
    }
    let sum: f64 = keys.iter().map(|&id| (a.get(id) - b.get(id)).powi(2)).sum();
    sum / keys.len() as f64
}

/// High-probability bound on the time to reach a target state after `t`
/// updates, driven by the recorded error ratios.
///
/// `deltas` holds the ratios for updates 1..t-1 (pass an empty slice for
/// t = 1, where the bound degenerates to `e_1`). With weights
/// `ratio(j) = 1 + gamma * delta_j / j`, the leading coefficient is
/// `prod(ratio) / t` and each tail weight `psi_i` is the suffix product
/// `prod_{j=t-i..t-1}(ratio) / t`; the bound is
/// `omega * e_1 + sqrt(ln(1/e) * sum(psi^2) / 2)`.
pub fn convergence_bound(
    deltas: &[f64],
    e_1: f64,
    confidence_e: f64,
    gamma: f64,
) -> Result<f64, LearnerError> {
    if !(0.0..1.0).contains(&confidence_e) || confidence_e == 0.0 {
        return Err(LearnerError::BadConfidence(confidence_e));
    }
    for (index, &value) in deltas.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(LearnerError::DeltaOutOfRange { index, value });
        }
    }
    assert!(e_1 >= 0.0);
    let t = deltas.len() + 1;
    if t == 1 {
        return Ok(e_1);
    }

    // psi_i = suffix product of ratios over j = t-i .. t-1, divided by t.
    // Accumulating from j = t-1 downward yields psi_1, psi_2, ..., and the
    // full product (psi_{t-1}) equals the leading weight omega.
    let tf = t as f64;
    let mut suffix = 1.0;
    let mut sum_psi_sq = 0.0;
    for i in 1..t {
        let j = t - i; // delta_j is deltas[j - 1]
        suffix *= 1.0 + gamma * deltas[j - 1] / j as f64;
        let psi = suffix / tf;
        sum_psi_sq += psi * psi;
    }
    let omega = suffix / tf;
    Ok(omega * e_1 + ((1.0 / confidence_e).ln() * sum_psi_sq / 2.0).sqrt())
}

/// Rolling per-run record of table error and the derived error ratios.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceDiagnostics {
    /// Per-iteration mean squared change of the fleet's tables.
    pub mse: Vec<f64>,
    /// (iteration, delta) pairs; recorded only when the traversal estimate
    /// was positive.
    pub deltas: Vec<(usize, f64)>,
}

impl ConvergenceDiagnostics {
    pub fn record(&mut self, iteration: usize, mse: f64, traversal_estimate_s: f64) {
        self.mse.push(mse);
        if traversal_estimate_s > 0.0 {
            self.deltas.push((iteration, mse / traversal_estimate_s));
        }
    }

    /// Evaluates the bound over the recorded ratios, clamped into [0, 1]
    /// as the bound requires.
    pub fn bound(&self, e_1: f64, confidence_e: f64, gamma: f64) -> Option<f64> {
        let clamped: Vec<f64> = self.deltas.iter().map(|(_, d)| d.clamp(0.0, 1.0)).collect();
        convergence_bound(&clamped, e_1, confidence_e, gamma).ok()
    }
}
