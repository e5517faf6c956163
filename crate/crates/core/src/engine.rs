//! Discrete-time lockstep execution of the distributed exploration loop
//! across all robots, termination, metrics collection, and the baseline
//! policies.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frontier::{cluster_frontiers, detect_frontiers, ExploredSet, FrontierState, StateId};
use crate::grid::{Cell, Dims};
use crate::learner::{
    bellman_update, compute_reward, q_table_mse, select_action, ActionCandidate,
    ConvergenceDiagnostics, LearnerParams, QTable, RemoteMergeRule,
};
use crate::local_map::LocalMap;
use crate::network::{
    full_table_payload, Message, MessageBus, MessageKind, NeighborGraph, PayloadLedger, RobotId,
    HEADER_BYTES,
};
use crate::planner::{
    astar_path, distance_field, estimate_traversal_time, move_duration, ControllerParams, Path,
    TauMatrix,
};
use crate::world::{raycast_scan, GroundTruthGrid, Pose, SensorParams};

/// Upper limit on fleet size (per-cell observer tracking uses a 32-bit mask).
pub const MAX_ROBOTS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("robot count must be at least 1")]
    NoRobots,
    #[error("fleet size {0} exceeds the supported maximum of {MAX_ROBOTS}")]
    TooManyRobots(usize),
    #[error("t_max must be at least 1")]
    ZeroIterations,
    #[error("start cell ({x}, {y}) is not a free world cell")]
    StartPoseOccupied { x: i32, y: i32 },
    #[error("{got} start cells provided for {need} robots")]
    StartPoseCount { got: usize, need: usize },
    #[error("world has {have} free cells, need {need} distinct starts")]
    NotEnoughFreeCells { need: usize, have: usize },
}

/// Exploration policy run by every robot in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Coverage-biased distributed Q-learning with lite communication.
    Cqlite,
    /// Uncoordinated nearest-frontier baseline (no communication).
    GreedyFrontier,
    /// Identical decisions to `Cqlite`, but accounting the communication of
    /// a share-everything strategy: full Q-table and full map every tick.
    FullShare,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Cqlite => "cqlite",
            Policy::GreedyFrontier => "greedy_frontier",
            Policy::FullShare => "full_share",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cqlite" => Ok(Policy::Cqlite),
            "greedy_frontier" => Ok(Policy::GreedyFrontier),
            "full_share" => Ok(Policy::FullShare),
            other => Err(format!(
                "unknown policy {other:?} (expected cqlite, greedy_frontier, or full_share)"
            )),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one trial needs: the world, the fleet, and all parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Arc<GroundTruthGrid>,
    pub robots: usize,
    /// Explicit start cells; when absent, starts are sampled from the seed.
    pub start_cells: Option<Vec<Cell>>,
    pub learner: LearnerParams,
    pub sensor: SensorParams,
    pub controller: ControllerParams,
    /// Overlap radius for the explored-state kernel, meters.
    pub r_is_m: f64,
    /// Communication range, meters.
    pub r_c_m: f64,
    /// Minimum frontier cluster size.
    pub min_cluster: usize,
    pub t_max: usize,
    pub seed: u64,
    pub policy: Policy,
    pub ssim_window: usize,
    /// Probability of picking a uniformly random candidate instead of the
    /// argmax; 0 keeps the pure greedy policy.
    pub epsilon: f64,
    /// Per-copy delivery loss probability; transmissions are still charged.
    pub drop_probability: f64,
    /// How received Q-values merge into local tables.
    pub remote_merge: RemoteMergeRule,
}

impl SimConfig {
    pub fn new(grid: Arc<GroundTruthGrid>, robots: usize, seed: u64) -> Self {
        Self {
            grid,
            robots,
            start_cells: None,
            learner: LearnerParams::default(),
            sensor: SensorParams::new(15.0, 256),
            controller: ControllerParams::default(),
            r_is_m: 1.0,
            r_c_m: 40.0,
            min_cluster: 3,
            t_max: 2000,
            seed,
            policy: Policy::Cqlite,
            ssim_window: 8,
            epsilon: 0.0,
            drop_probability: 0.0,
            remote_merge: RemoteMergeRule::default(),
        }
    }
}

/// One robot's complete runtime state.
#[derive(Debug, Clone)]
pub struct RobotAgent {
    pub id: RobotId,
    pub pose: Pose,
    pub map: LocalMap,
    pub table: QTable,
    pub explored: ExploredSet,
    /// Consecutive explored-frontier detections; the robot retires at 2.
    pub s_d: u8,
    pub odometer_m: f64,
    /// Set while a map request is outstanding; the robot holds position
    /// until replies arrive or the reply window passes.
    awaiting_patches: bool,
    request_tick: usize,
    /// The robot's current state: the last frontier it reached.
    pub current_state: Option<StateId>,
    cached_partition: Option<(Vec<StateId>, BTreeSet<StateId>)>,
}

/// One CSV row of the per-tick trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub tick: usize,
    pub sim_time_s: f64,
    pub exploration_pct: f64,
    pub overlap_pct: f64,
    pub bytes_cum: u64,
    pub merges_cum: u64,
}

/// Per-trial record of every reported metric.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub policy: Policy,
    pub seed: u64,
    pub iterations: usize,
    /// Simulated mission duration: sum over ticks of the slowest robot's
    /// move time.
    pub mapping_time_s: f64,
    pub per_robot_path_m: Vec<f64>,
    pub total_path_m: f64,
    pub final_exploration_pct: f64,
    pub final_overlap_pct: f64,
    pub final_ssim: f64,
    pub bytes_total: u64,
    pub bytes_by_kind: [u64; 4],
    pub messages_by_kind: [u64; 4],
    pub q_entries_shared: Vec<u64>,
    /// Individual map-patch applications.
    pub merge_events: u64,
    /// Ticks in which at least one merge happened.
    pub merge_ticks: u64,
    pub rows: Vec<TickRow>,
    /// Largest absolute local Q-value change per tick, fleet-wide.
    pub max_q_delta_per_tick: Vec<f64>,
    pub partition_violations: u64,
    pub q_bound_violations: u64,
    pub connectivity_violations: u64,
    pub internal_skips: u64,
    pub diagnostics: ConvergenceDiagnostics,
    /// High-probability convergence-time bound evaluated at confidence 0.05.
    pub convergence_bound_s: Option<f64>,
}

impl MetricsReport {
    /// (merge count, iterations, ratio) for the merge-frequency analysis;
    /// the count is the number of ticks that merged at least one map.
    pub fn merge_frequency(&self) -> (u64, usize, f64) {
        let ratio = if self.iterations == 0 {
            0.0
        } else {
            self.merge_ticks as f64 / self.iterations as f64
        };
        (self.merge_ticks, self.iterations, ratio)
    }

    pub fn tick_csv_header() -> &'static str {
        "tick,sim_time_s,exploration_pct,overlap_pct,bytes_cum,merges_cum"
    }

    pub fn tick_csv(&self) -> String {
        let mut out = String::from(Self::tick_csv_header());
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{},{}\n",
                row.tick,
                row.sim_time_s,
                row.exploration_pct,
                row.overlap_pct,
                row.bytes_cum,
                row.merges_cum
            ));
        }
        out
    }

    pub fn summary_csv_header() -> &'static str {
        "policy,seed,iterations,mapping_time_s,total_path_m,exploration_pct,overlap_pct,ssim,\
         bytes_total,q_update_bytes,frontier_bytes,request_bytes,patch_bytes,merge_events,merge_ticks"
    }

    pub fn summary_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
            self.policy,
            self.seed,
            self.iterations,
            self.mapping_time_s,
            self.total_path_m,
            self.final_exploration_pct,
            self.final_overlap_pct,
            self.final_ssim,
            self.bytes_total,
            self.bytes_by_kind[0],
            self.bytes_by_kind[1],
            self.bytes_by_kind[2],
            self.bytes_by_kind[3],
            self.merge_events,
            self.merge_ticks
        )
    }
}

/// Live state of one trial, advanced one lockstep tick at a time.
#[derive(Debug)]
pub struct SimState {
    config: SimConfig,
    dims: Dims,
    agents: Vec<RobotAgent>,
    bus: MessageBus,
    ledger: PayloadLedger,
    tick: usize,
    sim_time_s: f64,
    /// Per-cell bitmask of robots that have directly observed the cell.
    observers: Vec<u32>,
    observed_cells: usize,
    multi_observed_cells: usize,
    rows: Vec<TickRow>,
    max_q_delta_per_tick: Vec<f64>,
    merge_events: u64,
    merge_ticks: u64,
    tick_had_merge: bool,
    partition_violations: u64,
    q_bound_violations: u64,
    connectivity_violations: u64,
    internal_skips: u64,
    reward_min: f64,
    reward_max: f64,
    diagnostics: ConvergenceDiagnostics,
    first_estimate_s: Option<f64>,
    last_move_time: Option<f64>,
    /// Drawn from only when epsilon or drop_probability is nonzero, so the
    /// default configuration's trajectories do not depend on it.
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(config: SimConfig) -> Result<Self, EngineError> {
        if config.robots == 0 {
            return Err(EngineError::NoRobots);
        }
        if config.robots > MAX_ROBOTS {
            return Err(EngineError::TooManyRobots(config.robots));
        }
        if config.t_max == 0 {
            return Err(EngineError::ZeroIterations);
        }
        config.learner.validate();
        let dims = config.grid.dims();
        let starts = resolve_starts(&config)?;

        let agents = starts
            .iter()
            .enumerate()
            .map(|(i, &cell)| RobotAgent {
                id: RobotId(i as u8),
                pose: Pose::at_cell(&dims, cell),
                map: LocalMap::new(dims),
                table: QTable::new(RobotId(i as u8)),
                explored: ExploredSet::new(),
                s_d: 0,
                odometer_m: 0.0,
                awaiting_patches: false,
                request_tick: 0,
                current_state: None,
                cached_partition: None,
            })
            .collect();

        Ok(Self {
            bus: MessageBus::new(config.robots),
            ledger: PayloadLedger::new(config.robots),
            observers: vec![0u32; dims.cell_count()],
            observed_cells: 0,
            multi_observed_cells: 0,
            rows: Vec::new(),
            max_q_delta_per_tick: Vec::new(),
            merge_events: 0,
            merge_ticks: 0,
            tick_had_merge: false,
            partition_violations: 0,
            q_bound_violations: 0,
            connectivity_violations: 0,
            internal_skips: 0,
            reward_min: f64::INFINITY,
            reward_max: f64::NEG_INFINITY,
            diagnostics: ConvergenceDiagnostics::default(),
            first_estimate_s: None,
            last_move_time: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15),
            tick: 0,
            sim_time_s: 0.0,
            agents,
            dims,
            config,
        })
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn agents(&self) -> &[RobotAgent] {
        &self.agents
    }

    pub fn ledger(&self) -> &PayloadLedger {
        &self.ledger
    }

    pub fn exploration_pct(&self) -> f64 {
        100.0 * self.observed_cells as f64 / self.dims.cell_count() as f64
    }

    pub fn overlap_pct(&self) -> f64 {
        if self.observed_cells == 0 {
            0.0
        } else {
            100.0 * self.multi_observed_cells as f64 / self.observed_cells as f64
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.tick >= self.config.t_max
            || self.observed_cells == self.dims.cell_count()
            || self.agents.iter().all(|a| a.s_d >= 2)
    }

    /// Merge of every robot's knowledge into one map.
    pub fn union_map(&self) -> LocalMap {
        let mut union = LocalMap::new(self.dims);
        for agent in &self.agents {
            let patch = agent.map.known_cells_patch(agent.id);
            union.merge_patch(&patch).expect("same frame");
        }
        union
    }

    /// Runs one lockstep tick: deliver messages, then let every active
    /// robot sense, decide, and move in fixed id order.
    pub fn step(&mut self) {
        debug_assert!(!self.is_terminated(), "step on a terminated state");
        let graph = NeighborGraph::build(
            &self.agents.iter().map(|a| a.pose).collect::<Vec<_>>(),
            self.config.r_c_m,
        );
        if !graph.is_connected() {
            self.connectivity_violations += 1;
        }
        self.tick_had_merge = false;

        let table_snapshot: Vec<QTable> = self.agents.iter().map(|a| a.table.clone()).collect();

        // Phase A: apply everything that arrived at this tick boundary.
        // Retired robots keep participating here so they can serve map
        // requests with what they learned.
        self.bus.deliver_tick();
        for i in 0..self.agents.len() {
            self.process_inbox(i);
        }

        // Phase B: sense / decide / move for robots still exploring.
        let active_at_start: Vec<bool> = self.agents.iter().map(|a| a.pose.active).collect();
        let mut move_times: Vec<f64> = Vec::new();
        let mut move_estimates: Vec<f64> = Vec::new();
        let mut max_q_delta = 0.0f64;
        for i in 0..self.agents.len() {
            if !self.agents[i].pose.active {
                continue;
            }
            if self.agents[i].awaiting_patches {
                // Hold position until the reply window closes.
                if self.tick < self.agents[i].request_tick + 2 {
                    continue;
                }
                self.agents[i].awaiting_patches = false;
            }
            match self.config.policy {
                Policy::GreedyFrontier => self.act_greedy(i, &mut move_times),
                Policy::Cqlite | Policy::FullShare => self.act_cqlite(
                    i,
                    &graph,
                    &mut move_times,
                    &mut move_estimates,
                    &mut max_q_delta,
                ),
            }
        }

        if self.config.policy == Policy::FullShare {
            self.account_full_share(&graph, &active_at_start);
        }

        self.check_q_bounds();

        // Tick bookkeeping.
        let tick_duration = move_times.iter().fold(0.0f64, |a, &b| a.max(b));
        self.sim_time_s += tick_duration;
        if self.tick_had_merge {
            self.merge_ticks += 1;
        }
        self.ledger.roll_tick();
        self.max_q_delta_per_tick.push(max_q_delta);

        let fleet_mse = {
            let n = self.agents.len() as f64;
            self.agents
                .iter()
                .zip(&table_snapshot)
                .map(|(a, prev)| q_table_mse(&a.table, prev))
                .sum::<f64>()
                / n
        };
        let mean_estimate = if move_estimates.is_empty() {
            0.0
        } else {
            move_estimates.iter().sum::<f64>() / move_estimates.len() as f64
        };
        if self.first_estimate_s.is_none() && mean_estimate > 0.0 {
            self.first_estimate_s = Some(mean_estimate);
        }
        self.diagnostics.record(self.tick, fleet_mse, mean_estimate);

        self.rows.push(TickRow {
            tick: self.tick,
            sim_time_s: self.sim_time_s,
            exploration_pct: self.exploration_pct(),
            overlap_pct: self.overlap_pct(),
            bytes_cum: self.ledger.total_bytes(),
            merges_cum: self.merge_events,
        });
        self.tick += 1;
    }

    /// True when this copy survives the configured link loss. Transmission
    /// cost is charged either way.
    fn link_delivers(&mut self) -> bool {
        let p = self.config.drop_probability;
        p <= 0.0 || self.rng.random::<f64>() >= p
    }

    fn send_broadcast(&mut self, msg: Message, graph: &NeighborGraph) -> usize {
        if self.config.drop_probability > 0.0 {
            let p = self.config.drop_probability;
            let rng = &mut self.rng;
            self.bus
                .broadcast_filtered(msg, graph, &mut self.ledger, |_| rng.random::<f64>() >= p)
        } else {
            self.bus.broadcast(msg, graph, &mut self.ledger)
        }
    }

    fn process_inbox(&mut self, i: usize) {
        let id = self.agents[i].id;
        for msg in self.bus.drain_inbox(id) {
            match msg.kind {
                MessageKind::QUpdate { state, value } => {
                    let rule = self.config.remote_merge;
                    if self.agents[i]
                        .table
                        .apply_remote_with_rule(state, value, rule)
                        .is_err()
                    {
                        self.internal_skips += 1;
                    }
                }
                MessageKind::ExploredFrontier { state, cell, .. } => {
                    self.agents[i].explored.insert_received(state, cell);
                }
                MessageKind::MapRequest => {
                    let patch = self.agents[i].map.known_cells_patch(id);
                    let reply = Message::new(id, MessageKind::MapPatchMsg(patch));
                    if self.link_delivers() {
                        self.bus.send_to(reply, msg.sender, &mut self.ledger);
                    } else {
                        self.ledger.credit(
                            id,
                            reply.kind.ledger_slot(),
                            reply.payload_bytes() as u64,
                            1,
                        );
                    }
                }
                MessageKind::MapPatchMsg(patch) => {
                    if self.agents[i].map.merge_patch(&patch).is_err() {
                        self.internal_skips += 1;
                        continue;
                    }
                    self.merge_events += 1;
                    self.tick_had_merge = true;
                    self.agents[i].awaiting_patches = false;
                    // New knowledge invalidates the cached assignment.
                    self.agents[i].cached_partition = None;
                }
            }
        }
    }

    fn observe_scan(&mut self, robot: usize, scan: &crate::world::ScanResult) {
        let bit = 1u32 << robot;
        for cell in scan.free.iter().chain(scan.occupied.iter()) {
            let idx = self.dims.index(*cell);
            let prev = self.observers[idx];
            if prev == 0 {
                self.observed_cells += 1;
            } else if prev.count_ones() == 1 && prev & bit == 0 {
                self.multi_observed_cells += 1;
            }
            self.observers[idx] = prev | bit;
        }
    }

    fn sense(&mut self, i: usize) -> Option<Vec<FrontierState>> {
        let scan = match raycast_scan(&self.config.grid, &self.agents[i].pose, &self.config.sensor)
        {
            Ok(scan) => scan,
            Err(_) => {
                self.internal_skips += 1;
                return None;
            }
        };
        self.observe_scan(i, &scan);
        if self.agents[i].map.integrate_scan(&scan).is_err() {
            self.internal_skips += 1;
            return None;
        }
        let cells = detect_frontiers(&self.agents[i].map);
        Some(cluster_frontiers(
            &self.dims,
            &cells,
            self.config.min_cluster,
        ))
    }

    fn retire(&mut self, i: usize) {
        self.agents[i].s_d = 2;
        self.agents[i].pose.active = false;
    }

    fn act_greedy(&mut self, i: usize, move_times: &mut Vec<f64>) {
        let Some(clusters) = self.sense(i) else {
            return;
        };
        if clusters.is_empty() {
            self.retire(i);
            return;
        }
        let own_cell = self.agents[i].pose.cell(&self.dims);
        let mut best: Option<(f64, StateId, Path)> = None;
        for state in &clusters {
            let Ok(Some(path)) = astar_path(&self.agents[i].map, own_cell, state.centroid) else {
                continue;
            };
            let better = match &best {
                Some((len, id, _)) => {
                    path.length_m < *len || (path.length_m == *len && state.id < *id)
                }
                None => true,
            };
            if better {
                best = Some((path.length_m, state.id, path));
            }
        }
        match best {
            Some((_, _, path)) => self.execute_move(i, &path),
            None => self.retire(i),
        }
        if let Some(t) = self.last_move_time.take() {
            move_times.push(t);
        }
    }

    fn act_cqlite(
        &mut self,
        i: usize,
        graph: &NeighborGraph,
        move_times: &mut Vec<f64>,
        move_estimates: &mut Vec<f64>,
        max_q_delta: &mut f64,
    ) {
        let Some(clusters) = self.sense(i) else {
            return;
        };
        if clusters.is_empty() {
            // Nothing left to explore from this robot's point of view.
            self.retire(i);
            return;
        }

        let novel: Vec<FrontierState> = clusters
            .iter()
            .filter(|s| !self.agents[i].explored.contains(s.id))
            .copied()
            .collect();
        if novel.is_empty() {
            self.request_maps(i, graph);
            return;
        }

        // Plan to every novel candidate on the robot's own map.
        let own_cell = self.agents[i].pose.cell(&self.dims);
        let mut planned: Vec<(FrontierState, Path)> = Vec::new();
        for state in &novel {
            if let Ok(Some(path)) = astar_path(&self.agents[i].map, own_cell, state.centroid) {
                planned.push((*state, path));
            }
        }
        if planned.is_empty() {
            self.request_maps(i, graph);
            return;
        }

        let mine = self.voronoi_cell(i, &novel);
        let next_max = novel
            .iter()
            .map(|s| self.agents[i].table.get(s.id))
            .fold(0.0f64, f64::max);

        let params = self.config.learner;
        let resolution = self.dims.resolution;
        let mut candidates: Vec<ActionCandidate> = Vec::new();
        let mut chosen_inputs: Vec<(StateId, f64, usize)> = Vec::new();
        for (idx, (state, path)) in planned.iter().enumerate() {
            let q_current = self.agents[i].table.get(state.id);
            let reward = compute_reward(
                state,
                &self.agents[i].explored,
                q_current,
                &params,
                self.config.r_is_m,
                resolution,
                path.length_m,
            );
            let q_value = bellman_update(q_current, reward, next_max, params.alpha, params.gamma);
            let est_time_s = match estimate_traversal_time(path, &self.config.controller) {
                Ok(e) => e,
                Err(_) => {
                    self.internal_skips += 1;
                    continue;
                }
            };
            if mine.contains(&state.id) {
                candidates.push(ActionCandidate {
                    id: state.id,
                    q: q_value,
                    est_time_s,
                });
                chosen_inputs.push((state.id, reward, idx));
            }
        }
        if candidates.is_empty() {
            self.request_maps(i, graph);
            return;
        }

        let chosen_id =
            if self.config.epsilon > 0.0 && self.rng.random::<f64>() < self.config.epsilon {
                candidates[self.rng.random_range(0..candidates.len())].id
            } else {
                select_action(&candidates).expect("candidates nonempty")
            };
        let (_, reward, path_idx) = chosen_inputs
            .iter()
            .find(|(id, _, _)| *id == chosen_id)
            .copied()
            .expect("chosen candidate was planned");
        let (state, path) = planned[path_idx].clone();

        self.reward_min = self.reward_min.min(reward);
        self.reward_max = self.reward_max.max(reward);

        let prior = self.agents[i].table.get(chosen_id);
        let q_star = match self.agents[i]
            .table
            .q_update_with_next(chosen_id, reward, next_max, &params)
        {
            Ok(q) => q,
            Err(_) => {
                self.internal_skips += 1;
                return;
            }
        };
        *max_q_delta = max_q_delta.max((q_star - prior).abs());

        self.execute_move(i, &path);
        if let Some(t) = self.last_move_time.take() {
            move_times.push(t);
        }
        if let Ok(est) = estimate_traversal_time(&path, &self.config.controller) {
            move_estimates.push(est);
        }

        // Lite cooperation: share only the fresh (state, Q) pair and the
        // newly explored frontier.
        let id = self.agents[i].id;
        let q_msg = Message::new(
            id,
            MessageKind::QUpdate {
                state: chosen_id,
                value: q_star,
            },
        );
        if self.config.policy == Policy::FullShare {
            // The per-tick full-table share below subsumes this payload;
            // deliver the same content without double-charging.
            if self.config.drop_probability > 0.0 {
                let p = self.config.drop_probability;
                let rng = &mut self.rng;
                self.bus
                    .broadcast_uncounted(q_msg, graph, |_| rng.random::<f64>() >= p);
            } else {
                self.bus.broadcast_uncounted(q_msg, graph, |_| true);
            }
        } else {
            self.send_broadcast(q_msg, graph);
            self.ledger.credit_q_entries(id, 1);
        }
        self.send_broadcast(
            Message::new(
                id,
                MessageKind::ExploredFrontier {
                    state: chosen_id,
                    cell: state.centroid,
                    relayed: false,
                },
            ),
            graph,
        );

        let agent = &mut self.agents[i];
        agent.explored.insert_local(chosen_id, state.centroid);
        agent.current_state = Some(chosen_id);
        agent.s_d = 0;
        agent.cached_partition = None;
    }

    fn request_maps(&mut self, i: usize, graph: &NeighborGraph) {
        let id = self.agents[i].id;
        let deliveries = self.send_broadcast(Message::new(id, MessageKind::MapRequest), graph);
        let agent = &mut self.agents[i];
        agent.s_d = (agent.s_d + 1).min(2);
        if agent.s_d >= 2 {
            agent.pose.active = false;
            return;
        }
        if deliveries > 0 {
            agent.awaiting_patches = true;
            agent.request_tick = self.tick;
        }
    }

    /// Frontier states this robot is responsible for, under the travel-time
    /// split of the current candidate set. Recomputed only when the set
    /// changes; peers outside the robot's known map fall back to an
    /// optimistic straight-line travel time.
    fn voronoi_cell(&mut self, i: usize, novel: &[FrontierState]) -> BTreeSet<StateId> {
        let key: Vec<StateId> = novel.iter().map(|s| s.id).collect();
        if let Some((cached_key, cached)) = &self.agents[i].cached_partition {
            if *cached_key == key {
                return cached.clone();
            }
        }

        let speed = self.config.controller.v_max;
        let active_rows: Vec<usize> = (0..self.agents.len())
            .filter(|&j| j == i || self.agents[j].pose.active)
            .collect();
        let n_rows = active_rows.len();
        let n_cols = n_rows + novel.len();
        let mut times = vec![vec![f64::INFINITY; n_cols]; n_rows];
        for (row, &j) in active_rows.iter().enumerate() {
            let peer_pose = self.agents[j].pose;
            let peer_cell = peer_pose.cell(&self.dims);
            if self.agents[i].map.is_free(peer_cell) {
                let field = distance_field(&self.agents[i].map, peer_cell);
                for (q, state) in novel.iter().enumerate() {
                    times[row][n_rows + q] = field[self.dims.index(state.centroid)] / speed;
                }
            } else {
                for (q, state) in novel.iter().enumerate() {
                    let (sx, sy) = self.dims.point_of_cell(state.centroid);
                    let d = ((peer_pose.x - sx).powi(2) + (peer_pose.y - sy).powi(2)).sqrt();
                    times[row][n_rows + q] = d / speed;
                }
            }
            times[row][row] = 0.0;
        }
        let tau = TauMatrix { times };
        let robot_rows: Vec<usize> = (0..n_rows).collect();
        let state_cols: Vec<usize> = (0..novel.len()).map(|q| n_rows + q).collect();
        let partition = crate::partition::voronoi_partition(&tau, &robot_rows, &state_cols);

        // Partition sanity: assigned cells plus unassigned must cover every
        // state exactly once.
        let mut seen = BTreeSet::new();
        let mut dup = false;
        for col in partition
            .cells
            .iter()
            .flatten()
            .chain(partition.unassigned.iter())
        {
            dup |= !seen.insert(*col);
        }
        if dup || seen.len() != state_cols.len() {
            self.partition_violations += 1;
        }

        let my_row = active_rows
            .iter()
            .position(|&j| j == i)
            .expect("self is listed");
        let mine: BTreeSet<StateId> = partition.cells[my_row]
            .iter()
            .map(|&col| novel[col - n_rows].id)
            .collect();
        self.agents[i].cached_partition = Some((key, mine.clone()));
        mine
    }

    fn account_full_share(&mut self, graph: &NeighborGraph, active_at_start: &[bool]) {
        let mut shared = false;
        for (i, &was_active) in active_at_start.iter().enumerate() {
            if !was_active {
                continue;
            }
            let id = self.agents[i].id;
            let neighbors = graph.degree(id) as u64;
            if neighbors == 0 {
                continue;
            }
            let table_bytes = full_table_payload(&self.agents[i].table) as u64;
            self.ledger.credit(id, 0, table_bytes, neighbors);
            self.ledger
                .credit_q_entries(id, self.agents[i].table.len() as u64);
            let patch_bytes = (HEADER_BYTES + 4 + self.agents[i].map.known_count() * 5) as u64;
            self.ledger.credit(id, 3, patch_bytes, neighbors);
            self.merge_events += neighbors;
            shared = true;
        }
        if shared {
            self.tick_had_merge = true;
        }
    }

    fn check_q_bounds(&mut self) {
        if !self.reward_min.is_finite() || !self.reward_max.is_finite() {
            return;
        }
        let gamma = self.config.learner.gamma;
        let lo = (self.reward_min / (1.0 - gamma)).min(0.0) - 1e-9;
        let hi = (self.reward_max / (1.0 - gamma)).max(0.0) + 1e-9;
        for agent in &self.agents {
            for (_, q) in agent.table.iter() {
                if q < lo || q > hi {
                    self.q_bound_violations += 1;
                }
            }
        }
    }

    fn execute_move(&mut self, i: usize, path: &Path) {
        let duration = move_duration(path, self.agents[i].pose.theta, &self.config.controller);
        let agent = &mut self.agents[i];
        agent.odometer_m += path.length_m;
        let goal = path.goal();
        let (x, y) = self.dims.point_of_cell(goal);
        let theta = if path.cells.len() >= 2 {
            let w = &path.cells[path.cells.len() - 2..];
            ((w[1].y - w[0].y) as f64).atan2((w[1].x - w[0].x) as f64)
        } else {
            agent.pose.theta
        };
        agent.pose = Pose {
            x,
            y,
            theta,
            active: agent.pose.active,
        };
        self.last_move_time = Some(duration);
    }

    pub fn into_report(self) -> MetricsReport {
        let union = self.union_map();
        let final_ssim = crate::local_map::map_ssim(
            &union,
            &self.config.grid,
            self.config
                .ssim_window
                .min(self.dims.width)
                .min(self.dims.height),
        )
        .unwrap_or(f64::NAN);
        let per_robot_path_m: Vec<f64> = self.agents.iter().map(|a| a.odometer_m).collect();
        let total_path_m = per_robot_path_m.iter().sum();
        let convergence_bound_s = self
            .first_estimate_s
            .and_then(|e1| self.diagnostics.bound(e1, 0.05, self.config.learner.gamma));
        MetricsReport {
            policy: self.config.policy,
            seed: self.config.seed,
            iterations: self.tick,
            mapping_time_s: self.sim_time_s,
            total_path_m,
            per_robot_path_m,
            final_exploration_pct: 100.0 * self.observed_cells as f64
                / self.dims.cell_count() as f64,
            final_overlap_pct: if self.observed_cells == 0 {
                0.0
            } else {
                100.0 * self.multi_observed_cells as f64 / self.observed_cells as f64
            },
            final_ssim,
            bytes_total: self.ledger.total_bytes(),
            bytes_by_kind: self.ledger.kind_bytes(),
            messages_by_kind: self.ledger.kind_messages(),
            q_entries_shared: (0..self.agents.len())
                .map(|i| self.ledger.q_entries(RobotId(i as u8)))
                .collect(),
            merge_events: self.merge_events,
            merge_ticks: self.merge_ticks,
            rows: self.rows,
            max_q_delta_per_tick: self.max_q_delta_per_tick,
            partition_violations: self.partition_violations,
            q_bound_violations: self.q_bound_violations,
            connectivity_violations: self.connectivity_violations,
            internal_skips: self.internal_skips,
            diagnostics: self.diagnostics,
            convergence_bound_s,
        }
    }
}

fn resolve_starts(config: &SimConfig) -> Result<Vec<Cell>, EngineError> {
    if let Some(cells) = &config.start_cells {
        if cells.len() != config.robots {
            return Err(EngineError::StartPoseCount {
                got: cells.len(),
                need: config.robots,
            });
        }
        for &cell in cells {
            if !config.grid.dims().contains(cell) || !config.grid.is_free(cell) {
                return Err(EngineError::StartPoseOccupied {
                    x: cell.x,
                    y: cell.y,
                });
            }
        }
        return Ok(cells.clone());
    }
    let free: Vec<Cell> = config.grid.free_cells().collect();
    if free.len() < config.robots {
        return Err(EngineError::NotEnoughFreeCells {
            need: config.robots,
            have: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picked = rand::seq::index::sample(&mut rng, free.len(), config.robots);
    Ok(picked.iter().map(|i| free[i]).collect())
}

/// Runs a trial to termination.
pub fn run(config: SimConfig) -> Result<MetricsReport, EngineError> {
    run_with_hook(config, |_| {})
}

/// Runs a trial, invoking the hook after every tick (snapshot export etc.).
pub fn run_with_hook(
    config: SimConfig,
    mut hook: impl FnMut(&SimState),
) -> Result<MetricsReport, EngineError> {
    let mut state = SimState::new(config)?;
    while !state.is_terminated() {
        state.step();
        hook(&state);
    }
    Ok(state.into_report())
}
