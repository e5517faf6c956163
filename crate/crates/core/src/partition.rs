//! Travel-time Voronoi partition of frontier states among robots and the
//! priority-weighted partition cost.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::planner::TauMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("assigned state column {0} has no priority value")]
    MissingPriority(usize),
}

/// Assignment of state columns to robots. Every reachable state belongs to
/// exactly one robot; states no robot can reach stay unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Per-robot assigned state columns, indexed like the `robot_rows`
    /// passed to [`voronoi_partition`].
    pub cells: Vec<Vec<usize>>,
    /// State columns unreachable from every robot.
    pub unassigned: Vec<usize>,
}

impl Partition {
    pub fn assigned_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

/// Priority values for state columns; absent columns carry no priority
/// (unreachable states are excluded from costing).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorityMap {
    values: BTreeMap<usize, f64>,
}

impl PriorityMap {
    pub fn get(&self, state_col: usize) -> Option<f64> {
        self.values.get(&state_col).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }
}

/// Splits states among robots by travel time: state q goes to the robot
/// whose row reaches it fastest, ties to the lower robot index.
pub fn voronoi_partition(tau: &TauMatrix, robot_rows: &[usize], state_cols: &[usize]) -> Partition {
    let mut cells = vec![Vec::new(); robot_rows.len()];
    let mut unassigned = Vec::new();
    for &q in state_cols {
        let mut best: Option<(usize, f64)> = None;
        for (r, &row) in robot_rows.iter().enumerate() {
            let t = tau.at(row, q);
            if !t.is_finite() {
                continue;
            }
            match best {
                Some((_, bt)) if bt <= t => {}
                _ => best = Some((r, t)),
            }
        }
        match best {
            Some((r, _)) => cells[r].push(q),
            None => unassigned.push(q),
        }
    }
    Partition { cells, unassigned }
}

/// Priority of each reachable state for one robot: inverse travel time,
/// halved for already-explored states, normalized so the best state gets 1.
pub fn assign_priorities(
    tau: &TauMatrix,
    robot_row: usize,
    state_cols: &[usize],
    explored: &[bool],
) -> PriorityMap {
    assert_eq!(state_cols.len(), explored.len());
    let mut raw = BTreeMap::new();
    for (i, &q) in state_cols.iter().enumerate() {
        let t = tau.at(robot_row, q);
        if !t.is_finite() {
            continue;
        }
        let mut phi = 1.0 / (1.0 + t);
        if explored[i] {
            phi *= 0.5;
        }
        raw.insert(q, phi);
    }
    let max = raw.values().fold(0.0f64, |acc, &v| acc.max(v));
    if max > 0.0 {
        for v in raw.values_mut() {
            *v /= max;
        }
    }
    PriorityMap { values: raw }
}

/// Priority-weighted cost of each robot's cell:
/// `lambda_i = sum over assigned q of tau(p_i, q) * phi_q`.
pub fn partition_cost(
    partition: &Partition,
    tau: &TauMatrix,
    robot_rows: &[usize],
    priorities: &PriorityMap,
) -> Result<Vec<f64>, PartitionError> {
    let mut costs = Vec::with_capacity(robot_rows.len());
    for (r, &row) in robot_rows.iter().enumerate() {
        let mut cost = 0.0;
        for &q in &partition.cells[r] {
            let phi = priorities
                .get(q)
                .ok_or(PartitionError::MissingPriority(q))?;
            cost += tau.at(row, q) * phi;
        }
        costs.push(cost);
    }
    Ok(costs)
}
