//! Grid path planning and travel-time estimation: A* over the known-free
//! cells, the PI-controller traversal-time estimate, and pairwise state
//! travel times.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::grid::{Cell, NEIGHBORS_8};
use crate::local_map::{CellState, LocalMap};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("path endpoint ({x}, {y}) is not a known-free cell")]
    InvalidEndpoint { x: i32, y: i32 },
    #[error("controller produced a zero velocity command on a nonzero segment")]
    DegenerateController,
}

/// Proportional-integral controller gains and kinematic limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub k_p: f64,
    pub k_i: f64,
    pub v_max: f64,
    pub w_max: f64,
}

impl ControllerParams {
    pub fn new(k_p: f64, k_i: f64, v_max: f64, w_max: f64) -> Self {
        assert!(k_p > 0.0 && k_i >= 0.0 && v_max > 0.0);
        Self {
            k_p,
            k_i,
            v_max,
            w_max,
        }
    }
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self::new(2.0, 0.5, 0.5, std::f64::consts::FRAC_PI_4)
    }
}

/// An 8-connected waypoint path through known-free cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub cells: Vec<Cell>,
    /// Sum of step lengths in meters (resolution or sqrt(2) * resolution).
    pub length_m: f64,
}

impl Path {
    pub fn start(&self) -> Cell {
        self.cells[0]
    }

    pub fn goal(&self) -> Cell {
        *self.cells.last().expect("paths are nonempty")
    }

    /// Per-segment lengths in meters.
    pub fn segment_lengths(&self, resolution: f64) -> Vec<f64> {
        self.cells
            .windows(2)
            .map(|w| step_cost(w[0], w[1]) * resolution)
            .collect()
    }
}

fn step_cost(a: Cell, b: Cell) -> f64 {
    if a.x != b.x && a.y != b.y {
        SQRT_2
    } else {
        1.0
    }
}

fn traversable(map: &LocalMap, cell: Cell) -> bool {
    map.state(cell) == CellState::Free
}

/// Admissible octile heuristic in cell units.
fn octile(a: Cell, b: Cell) -> f64 {
    let dx = (a.x - b.x).abs() as f64;
    let dy = (a.y - b.y).abs() as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

#[derive(PartialEq)]
struct HeapKey {
    f: f64,
    h: f64,
    seq: u64,
}

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.f
            .total_cmp(&other.f)
            .then(self.h.total_cmp(&other.h))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Shortest 8-connected path on the robot's map, treating unknown cells as
/// non-traversable. Returns `None` when the goal is unreachable. Endpoints
/// must be known-free (frontier goals qualify: frontier cells are free).
pub fn astar_path(map: &LocalMap, start: Cell, goal: Cell) -> Result<Option<Path>, PlannerError> {
    let dims = map.dims();
    for endpoint in [start, goal] {
        if !dims.contains(endpoint) || !traversable(map, endpoint) {
            return Err(PlannerError::InvalidEndpoint {
                x: endpoint.x,
                y: endpoint.y,
            });
        }
    }
    if start == goal {
        return Ok(Some(Path {
            cells: vec![start],
            length_m: 0.0,
        }));
    }

    let n = dims.cell_count();
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<u32> = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(HeapKey, u32)>> = BinaryHeap::new();
    let mut seq = 0u64;

    let start_idx = dims.index(start);
    g[start_idx] = 0.0;
    heap.push(Reverse((
        HeapKey {
            f: octile(start, goal),
            h: octile(start, goal),
            seq,
        },
        start_idx as u32,
    )));

    while let Some(Reverse((_, idx))) = heap.pop() {
        let idx = idx as usize;
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let cell = dims.cell_at(idx);
        if cell == goal {
            let mut cells = vec![cell];
            let mut cur = idx;
            while parent[cur] != u32::MAX {
                cur = parent[cur] as usize;
                cells.push(dims.cell_at(cur));
            }
            cells.reverse();
            return Ok(Some(Path {
                length_m: g[idx] * dims.resolution,
                cells,
            }));
        }
        for &(dx, dy) in &NEIGHBORS_8 {
            let next = Cell::new(cell.x + dx, cell.y + dy);
            if !dims.contains(next) || !traversable(map, next) {
                continue;
            }
            let nidx = dims.index(next);
            if closed[nidx] {
                continue;
            }
            let cost = g[idx] + step_cost(cell, next);
            if cost < g[nidx] {
                g[nidx] = cost;
                parent[nidx] = idx as u32;
                seq += 1;
                let h = octile(next, goal);
                heap.push(Reverse((
                    HeapKey {
                        f: cost + h,
                        h,
                        seq,
                    },
                    nidx as u32,
                )));
            }
        }
    }
    Ok(None)
}

/// Constant-speed travel time for a path.
pub fn travel_time(path: &Path, speed_m_s: f64) -> f64 {
    assert!(speed_m_s > 0.0);
    path.length_m / speed_m_s
}

/// PI-controller traversal-time estimate.
///
/// Each inter-waypoint distance is treated as the instantaneous error; the
/// velocity command is `K_p * e + K_I * sum(e)` clamped to `[0, v_max]`, and
/// every segment contributes `e^2 / v`. The integral term starts fresh on
/// every call, i.e. it resets at each planned action.
pub fn estimate_traversal_time(
    path: &Path,
    params: &ControllerParams,
) -> Result<f64, PlannerError> {
    estimate_traversal_time_segments(&path.segment_lengths(1.0), params)
}

/// Same estimate over explicit segment lengths in meters.
pub fn estimate_traversal_time_segments(
    segments_m: &[f64],
    params: &ControllerParams,
) -> Result<f64, PlannerError> {
    let mut integral = 0.0;
    let mut total = 0.0;
    for &e in segments_m {
        if e == 0.0 {
            continue;
        }
        integral += e;
        let v = (params.k_p * e + params.k_i * integral).clamp(0.0, params.v_max);
        if v <= 0.0 {
            return Err(PlannerError::DegenerateController);
        }
        total += e * e / v;
    }
    Ok(total)
}

/// Wall-clock duration of physically following a path: constant `v_max`
/// translation plus heading changes at `w_max`.
pub fn move_duration(path: &Path, start_theta: f64, params: &ControllerParams) -> f64 {
    let mut time = path.length_m / params.v_max;
    if params.w_max > 0.0 {
        let mut heading = start_theta;
        for w in path.cells.windows(2) {
            let next = ((w[1].y - w[0].y) as f64).atan2((w[1].x - w[0].x) as f64);
            let delta = crate::world::normalize_angle(next - heading);
            time += delta.abs() / params.w_max;
            heading = next;
        }
    }
    time
}

/// One node of a travel-time matrix: a grid position plus the speed used to
/// convert path length into time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauNode {
    pub cell: Cell,
    pub speed_m_s: f64,
}

/// Pairwise shortest travel times. Unreachable pairs are infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix {
    pub times: Vec<Vec<f64>>,
}

impl TauMatrix {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn at(&self, from: usize, to: usize) -> f64 {
        self.times[from][to]
    }
}

/// Shortest-distance field (meters) from a source cell over known-free
/// space. Unreachable and non-free cells are infinity.
pub fn distance_field(map: &LocalMap, source: Cell) -> Vec<f64> {
    let dims = map.dims();
    let n = dims.cell_count();
    let mut dist = vec![f64::INFINITY; n];
    if !dims.contains(source) || !traversable(map, source) {
        return dist;
    }
    let mut closed = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(HeapKey, u32)>> = BinaryHeap::new();
    let src = dims.index(source);
    dist[src] = 0.0;
    let mut seq = 0u64;
    heap.push(Reverse((
        HeapKey {
            f: 0.0,
            h: 0.0,
            seq,
        },
        src as u32,
    )));
    while let Some(Reverse((_, idx))) = heap.pop() {
        let idx = idx as usize;
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let cell = dims.cell_at(idx);
        for &(dx, dy) in &NEIGHBORS_8 {
            let next = Cell::new(cell.x + dx, cell.y + dy);
            if !dims.contains(next) || !traversable(map, next) {
                continue;
            }
            let nidx = dims.index(next);
            if closed[nidx] {
                continue;
            }
            let cost = dist[idx] + step_cost(cell, next);
            if cost < dist[nidx] {
                dist[nidx] = cost;
                seq += 1;
                heap.push(Reverse((
                    HeapKey {
                        f: cost,
                        h: 0.0,
                        seq,
                    },
                    nidx as u32,
                )));
            }
        }
    }
    for d in &mut dist {
        *d *= dims.resolution;
    }
    dist
}

/// Travel-time matrix over a node list: `tau[p][q]` is the shortest-path
/// distance from node p to node q divided by node p's speed. The diagonal is
/// zero and unreachable pairs are infinity.
pub fn pairwise_travel_times(map: &LocalMap, nodes: &[TauNode]) -> TauMatrix {
    let dims = map.dims();
    let mut times = vec![vec![f64::INFINITY; nodes.len()]; nodes.len()];
    for (p, node) in nodes.iter().enumerate() {
        assert!(node.speed_m_s > 0.0);
        let field = distance_field(map, node.cell);
        for (q, target) in nodes.iter().enumerate() {
            if p == q {
                times[p][q] = 0.0;
            } else if dims.contains(target.cell) {
                times[p][q] = field[dims.index(target.cell)] / node.speed_m_s;
            }
        }
    }
    TauMatrix { times }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::world::load_map;

    fn known_map(text: &str) -> LocalMap {
        // Ground-truth text reused as a fully known local map.
        let truth = load_map(text).unwrap();
        let dims = truth.dims();
        let mut map = LocalMap::new(dims);
        let mut scan = crate::world::ScanResult::default();
        for i in 0..dims.cell_count() {
            let c = dims.cell_at(i);
            if truth.is_occupied(c) {
                scan.occupied.push(c);
            } else {
                scan.free.push(c);
            }
        }
        map.integrate_scan(&scan).unwrap();
        map
    }

    #[test]
    fn start_equals_goal_gives_zero_length_path() {
        let map = known_map("5 5\n#####\n#...#\n#...#\n#...#\n#####");
        let p = astar_path(&map, Cell::new(2, 2), Cell::new(2, 2))
            .unwrap()
            .unwrap();
        assert_eq!(p.cells, vec![Cell::new(2, 2)]);
        assert_eq!(p.length_m, 0.0);
    }

    #[test]
    fn corridor_path_has_unit_steps() {
        let map = known_map("7 3\n#######\n#.....#\n#######");
        let p = astar_path(&map, Cell::new(1, 1), Cell::new(5, 1))
            .unwrap()
            .unwrap();
        assert_eq!(p.cells.len(), 5);
        assert!((p.length_m - 4.0 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn occupied_endpoint_is_invalid() {
        let map = known_map("5 5\n#####\n#...#\n#...#\n#...#\n#####");
        assert_eq!(
            astar_path(&map, Cell::new(0, 0), Cell::new(2, 2)).unwrap_err(),
            PlannerError::InvalidEndpoint { x: 0, y: 0 }
        );
    }

    #[test]
    fn unknown_cells_block_planning() {
        let dims = Dims::new(7, 7, 0.1);
        let mut map = LocalMap::new(dims);
        // Only two disconnected free pockets are known.
        map.integrate_scan(&crate::world::ScanResult {
            free: vec![Cell::new(1, 1), Cell::new(5, 5)],
            occupied: vec![],
        })
        .unwrap();
        assert_eq!(
            astar_path(&map, Cell::new(1, 1), Cell::new(5, 5)).unwrap(),
            None
        );
    }

    #[test]
    fn travel_time_is_distance_over_speed() {
        let path = Path {
            cells: vec![Cell::new(0, 0)],
            length_m: 5.0,
        };
        assert_eq!(travel_time(&path, 0.5), 10.0);
        let zero = Path {
            cells: vec![Cell::new(0, 0)],
            length_m: 0.0,
        };
        assert_eq!(travel_time(&zero, 0.5), 0.0);
    }

    #[test]
    fn traversal_estimate_single_segment() {
        // e = 1 m, K_p = 2, K_I = 0.5, generous v_max: v = 2.5, E = 0.4 s.
        let params = ControllerParams::new(2.0, 0.5, 10.0, 1.0);
        let e = estimate_traversal_time_segments(&[1.0], &params).unwrap();
        assert!((e - 0.4).abs() < 1e-12);
    }

    #[test]
    fn traversal_estimate_empty_path_is_zero() {
        let params = ControllerParams::default();
        assert_eq!(estimate_traversal_time_segments(&[], &params).unwrap(), 0.0);
    }

    #[test]
    fn traversal_estimate_clamps_to_v_max() {
        // Two 1 m segments with v_max = 0.5: both clamp, E = 4 s.
        let params = ControllerParams::new(2.0, 0.5, 0.5, 1.0);
        let e = estimate_traversal_time_segments(&[1.0, 1.0], &params).unwrap();
        assert!((e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn traversal_estimate_positive_and_integral_resets_per_call() {
        let params = ControllerParams::new(2.0, 0.5, 10.0, 1.0);
        let once = estimate_traversal_time_segments(&[1.0], &params).unwrap();
        let again = estimate_traversal_time_segments(&[1.0], &params).unwrap();
        assert_eq!(once, again);
        assert!(once > 0.0);
    }

    /// Simple array-scan Dijkstra used as an optimality oracle.
    fn dijkstra_oracle(map: &LocalMap, start: Cell, goal: Cell) -> Option<f64> {
        let dims = map.dims();
        let n = dims.cell_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        if map.state(start) != CellState::Free || map.state(goal) != CellState::Free {
            return None;
        }
        dist[dims.index(start)] = 0.0;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for i in 0..n {
                if !done[i] && dist[i] < best_d {
                    best = i;
                    best_d = dist[i];
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            let cell = dims.cell_at(best);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nb = Cell::new(cell.x + dx, cell.y + dy);
                    if !dims.contains(nb) || map.state(nb) != CellState::Free {
                        continue;
                    }
                    let w = if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 };
                    let ni = dims.index(nb);
                    if dist[best] + w < dist[ni] {
                        dist[ni] = dist[best] + w;
                    }
                }
            }
        }
        let d = dist[dims.index(goal)];
        d.is_finite().then_some(d * dims.resolution)
    }

    #[test]
    fn astar_matches_dijkstra_on_random_maps() {
        // Deterministic pseudo-random 15x15 maps.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        for _ in 0..25 {
            let side = 15usize;
            let mut text = format!("{side} {side}\n");
            let mut free = Vec::new();
            for y in 0..side {
                for x in 0..side {
                    let border = x == 0 || y == 0 || x == side - 1 || y == side - 1;
                    let blocked = border || next() % 100 < 25;
                    text.push(if blocked { '#' } else { '.' });
                    if !blocked {
                        free.push(Cell::new(x as i32, y as i32));
                    }
                }
                text.push('\n');
            }
            if free.len() < 2 {
                continue;
            }
            let map = known_map(&text);
            let start = free[(next() % free.len() as u64) as usize];
            let goal = free[(next() % free.len() as u64) as usize];
            let expected = dijkstra_oracle(&map, start, goal);
            let got = astar_path(&map, start, goal).unwrap().map(|p| p.length_m);
            match (got, expected) {
                (None, None) => {}
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "a*={a} dijkstra={b}"),
                other => panic!("reachability disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn tau_matrix_diagonal_zero_symmetric_for_uniform_speed() {
        let map = known_map("9 9\n#########\n#.......#\n#.......#\n#.......#\n#.......#\n#.......#\n#.......#\n#.......#\n#########");
        let nodes = vec![
            TauNode {
                cell: Cell::new(1, 1),
                speed_m_s: 0.5,
            },
            TauNode {
                cell: Cell::new(7, 7),
                speed_m_s: 0.5,
            },
            TauNode {
                cell: Cell::new(1, 7),
                speed_m_s: 0.5,
            },
        ];
        let tau = pairwise_travel_times(&map, &nodes);
        for p in 0..3 {
            assert_eq!(tau.at(p, p), 0.0);
            for q in 0..3 {
                assert!((tau.at(p, q) - tau.at(q, p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tau_entries_match_astar_distance_over_speed() {
        let map = known_map("11 11\n###########\n#.........#\n#.###.....#\n#.........#\n#.....###.#\n#.........#\n#.###.....#\n#.........#\n#....###..#\n#.........#\n###########");
        let nodes = vec![
            TauNode {
                cell: Cell::new(1, 1),
                speed_m_s: 0.5,
            },
            TauNode {
                cell: Cell::new(9, 9),
                speed_m_s: 0.25,
            },
            TauNode {
                cell: Cell::new(1, 9),
                speed_m_s: 1.0,
            },
            TauNode {
                cell: Cell::new(9, 1),
                speed_m_s: 0.5,
            },
        ];
        let tau = pairwise_travel_times(&map, &nodes);
        for p in 0..nodes.len() {
            for q in 0..nodes.len() {
                if p == q {
                    continue;
                }
                let d = astar_path(&map, nodes[p].cell, nodes[q].cell)
                    .unwrap()
                    .unwrap()
                    .length_m;
                assert!((tau.at(p, q) - d / nodes[p].speed_m_s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unreachable_tau_is_infinite() {
        let dims = Dims::new(7, 7, 0.1);
        let mut map = LocalMap::new(dims);
        map.integrate_scan(&crate::world::ScanResult {
            free: vec![Cell::new(1, 1), Cell::new(5, 5)],
            occupied: vec![],
        })
        .unwrap();
        let tau = pairwise_travel_times(
            &map,
            &[
                TauNode {
                    cell: Cell::new(1, 1),
                    speed_m_s: 0.5,
                },
                TauNode {
                    cell: Cell::new(5, 5),
                    speed_m_s: 0.5,
                },
            ],
        );
        assert!(tau.at(0, 1).is_infinite());
        assert_eq!(tau.at(0, 0), 0.0);
    }

    #[test]
    fn move_duration_adds_turning_cost() {
        let params = ControllerParams::new(2.0, 0.5, 0.5, std::f64::consts::FRAC_PI_4);
        let straight = Path {
            cells: vec![Cell::new(1, 1), Cell::new(2, 1), Cell::new(3, 1)],
            length_m: 0.2,
        };
        let bent = Path {
            cells: vec![Cell::new(1, 1), Cell::new(2, 1), Cell::new(2, 2)],
            length_m: 0.2,
        };
        let t_straight = move_duration(&straight, 0.0, &params);
        let t_bent = move_duration(&bent, 0.0, &params);
        assert!(t_bent > t_straight);
    }
}
