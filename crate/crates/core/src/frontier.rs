//! Frontier detection and clustering, the explored-state set, and the
//! distance-kernel overlap probability.

use std::collections::BTreeMap;

use crate::grid::{neighbors8, Cell, Dims};
use crate::local_map::{CellState, LocalMap};

/// Identifier of a frontier state, derived from its centroid cell so every
/// robot that clusters the same region the same way derives the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub u64);

impl StateId {
    pub fn from_cell(cell: Cell) -> Self {
        Self(cell.key())
    }

    pub fn cell(self) -> Cell {
        Cell::from_key(self.0)
    }
}

impl std::fmt::Display for StateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = self.cell();
        write!(f, "{}:{}", c.x, c.y)
    }
}

/// A clustered frontier region used as a Q-learning state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontierState {
    pub id: StateId,
    /// Cluster centroid snapped to the nearest member cell.
    pub centroid: Cell,
    /// Number of frontier cells in the cluster.
    pub size: usize,
}

/// Where an explored-set entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryOrigin {
    Local,
    Received,
}

/// The set of frontier states already visited by this robot or reported by
/// peers. Entries are never removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExploredSet {
    entries: BTreeMap<StateId, (Cell, EntryOrigin)>,
}

impl ExploredSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_local(&mut self, id: StateId, cell: Cell) {
        self.entries.entry(id).or_insert((cell, EntryOrigin::Local));
    }

    pub fn insert_received(&mut self, id: StateId, cell: Cell) {
        self.entries
            .entry(id)
            .or_insert((cell, EntryOrigin::Received));
    }

    pub fn contains(&self, id: StateId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (StateId, Cell, EntryOrigin)> + '_ {
        self.entries
            .iter()
            .map(|(id, (cell, origin))| (*id, *cell, *origin))
    }
}

/// Returns exactly the free cells with at least one unknown 8-neighbor, in
/// row-major order.
pub fn detect_frontiers(map: &LocalMap) -> Vec<Cell> {
    let dims = map.dims();
    let mut out = Vec::new();
    for idx in 0..dims.cell_count() {
        let cell = dims.cell_at(idx);
        if map.state_at(idx) != CellState::Free {
            continue;
        }
        if neighbors8(&dims, cell).any(|n| map.state(n) == CellState::Unknown) {
            out.push(cell);
        }
    }
    out
}

/// Groups frontier cells into 8-connected components and keeps those of at
/// least `min_cluster` cells. Each surviving component becomes one state at
/// its centroid, snapped to the nearest member cell (ties to the lowest key).
pub fn cluster_frontiers(dims: &Dims, cells: &[Cell], min_cluster: usize) -> Vec<FrontierState> {
    assert!(min_cluster >= 1);
    let index: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut seen = vec![false; cells.len()];
    let mut clusters = Vec::new();

    for start in 0..cells.len() {
        if seen[start] {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            members.push(cells[i]);
            for n in neighbors8(dims, cells[i]) {
                if let Some(&j) = index.get(&n) {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if members.len() < min_cluster {
            continue;
        }
        let cx = members.iter().map(|c| c.x as f64).sum::<f64>() / members.len() as f64;
        let cy = members.iter().map(|c| c.y as f64).sum::<f64>() / members.len() as f64;
        let centroid = *members
            .iter()
            .min_by(|a, b| {
                let da = (a.x as f64 - cx).powi(2) + (a.y as f64 - cy).powi(2);
                let db = (b.x as f64 - cx).powi(2) + (b.y as f64 - cy).powi(2);
                da.partial_cmp(&db).unwrap().then(a.key().cmp(&b.key()))
            })
            .expect("cluster is nonempty");
        clusters.push(FrontierState {
            id: StateId::from_cell(centroid),
            centroid,
            size: members.len(),
        });
    }
    clusters.sort_by_key(|s| s.id);
    clusters
}

/// Probability that a candidate state overlaps the explored set: the
/// fraction of explored states within `r_is_m` meters of the candidate.
/// An empty explored set means no overlap.
pub fn overlap_probability(
    candidate: Cell,
    explored: &ExploredSet,
    r_is_m: f64,
    resolution: f64,
) -> f64 {
    assert!(r_is_m > 0.0);
    if explored.is_empty() {
        return 0.0;
    }
    let within = explored
        .iter()
        .filter(|(_, cell, _)| candidate.distance_cells(*cell) * resolution <= r_is_m)
        .count();
    within as f64 / explored.len() as f64
}
