//! Deterministic multi-robot frontier-exploration simulator.
//!
//! A fleet of simulated robots builds occupancy maps of a shared world with
//! ray-cast range sensors and chooses frontier waypoints with a distributed,
//! coverage-biased Q-learning policy that communicates a single (state,
//! Q-value) pair and a frontier notice per move. Map content travels only on
//! request. Travel-time Voronoi partitioning splits the frontier set among
//! robots, and every simulated transmission is metered byte-exactly so
//! communication strategies can be compared under identical decisions.
//!
//! The crate is organized around the pipeline:
//!
//! * [`world`] — ground-truth grid, map file I/O, ray-cast scans
//! * [`local_map`] — per-robot tri-state maps, merging, coverage and SSIM
//! * [`frontier`] — frontier detection/clustering and the explored set
//! * [`planner`] — A* paths, traversal-time estimates, travel-time matrices
//! * [`learner`] — Q-table, reward, action selection, convergence bound
//! * [`partition`] — travel-time Voronoi split and partition cost
//! * [`network`] — neighbor graph, wire messages, FIFO bus, payload ledger
//! * [`engine`] — lockstep simulation loop, policies, metrics

pub mod engine;
pub mod frontier;
pub mod grid;
pub mod learner;
pub mod local_map;
pub mod network;
pub mod partition;
pub mod planner;
pub mod world;

pub use engine::{run, run_with_hook, MetricsReport, Policy, SimConfig, SimState};
pub use grid::{Cell, Dims};
pub use network::RobotId;
