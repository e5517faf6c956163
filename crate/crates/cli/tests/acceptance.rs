//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see them).
//!
//! The standard scenario is a 50x50 generated map (20% obstacle density),
//! 3 robots, 10 paired seeds, desk-scale sensor radius 0.6 m, and the stock
//! learning parameters. Policy comparisons reuse identical seeds so starts
//! and worlds match across policies.

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cqlite_cli::config::ScenarioConfig;
use cqlite_cli::genmap::generate_map;
use cqlite_cli::trials::run_trials;
use cqlite_core::engine::{run, MetricsReport, Policy, SimConfig};
use cqlite_core::frontier::{detect_frontiers, overlap_probability, ExploredSet, StateId};
use cqlite_core::grid::{Cell, Dims};
use cqlite_core::learner::{bellman_update, convergence_bound, LearnerParams, QTable};
use cqlite_core::local_map::{CellState, LocalMap};
use cqlite_core::network::RobotId;
use cqlite_core::planner::{astar_path, SQRT_2};
use cqlite_core::world::{load_map, ScanResult, SensorParams};

const TRIALS: u64 = 10;
const BASE_SEED: u64 = 1000;
const T_MAX: usize = 2000;

struct StandardBatch {
    /// (seed, cqlite, full_share, greedy) reports on identical seeds.
    runs: Vec<(u64, MetricsReport, MetricsReport, MetricsReport)>,
    elapsed: Duration,
}

fn standard_grid() -> Arc<cqlite_core::world::GroundTruthGrid> {
    let text = generate_map(50, 50, 0.2, 4242).expect("generator is satisfiable");
    Arc::new(load_map(&text).expect("generated maps parse"))
}

fn standard_config(seed: u64, policy: Policy) -> SimConfig {
    static GRID: OnceLock<Arc<cqlite_core::world::GroundTruthGrid>> = OnceLock::new();
    let grid = GRID.get_or_init(standard_grid).clone();
    let mut config = SimConfig::new(grid, 3, seed);
    config.policy = policy;
    config.sensor = SensorParams::new(0.6, 256);
    config.t_max = T_MAX;
    config
}

fn standard_batch() -> &'static StandardBatch {
    static BATCH: OnceLock<StandardBatch> = OnceLock::new();
    BATCH.get_or_init(|| {
        let start = Instant::now();
        let runs = (0..TRIALS)
            .map(|trial| {
                let seed = BASE_SEED + trial;
                let cq = run(standard_config(seed, Policy::Cqlite)).unwrap();
                let fs = run(standard_config(seed, Policy::FullShare)).unwrap();
                let greedy = run(standard_config(seed, Policy::GreedyFrontier)).unwrap();
                (seed, cq, fs, greedy)
            })
            .collect();
        StandardBatch {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_01_communication_reduction() {
    let batch = standard_batch();
    let cq_bytes: u64 = batch.runs.iter().map(|(_, cq, _, _)| cq.bytes_total).sum();
    let fs_bytes: u64 = batch.runs.iter().map(|(_, _, fs, _)| fs.bytes_total).sum();
    for (seed, cq, fs, _) in &batch.runs {
        // Identical decisions: the exploration traces must match tick for tick.
        assert_eq!(cq.rows.len(), fs.rows.len(), "seed {seed}");
        for (a, b) in cq.rows.iter().zip(&fs.rows) {
            assert_eq!(a.exploration_pct, b.exploration_pct, "seed {seed}");
        }
    }
    let ratio = cq_bytes as f64 / fs_bytes as f64;
    assert!(
        ratio <= 0.20,
        "criterion 1 (communication reduction): FAIL — ratio {ratio:.4}"
    );
    assert!(
        batch.elapsed < Duration::from_secs(30),
        "criterion 1 (communication reduction): FAIL — batch took {:?}",
        batch.elapsed
    );
    println!(
        "criterion 1 (communication reduction): PASS — {cq_bytes} B vs {fs_bytes} B \
         ({:.1}% of full share), batch in {:?}",
        100.0 * ratio,
        batch.elapsed
    );
}

#[test]
fn criterion_02_merge_frequency() {
    let batch = standard_batch();
    let mut worst = 0.0f64;
    for (seed, cq, fs, _) in &batch.runs {
        let (_, iters, cq_ratio) = cq.merge_frequency();
        assert!(iters > 0);
        assert!(
            cq_ratio < 0.2,
            "criterion 2 (merge frequency): FAIL — seed {seed} ratio {cq_ratio:.3}"
        );
        let (_, _, fs_ratio) = fs.merge_frequency();
        assert_eq!(
            fs_ratio, 1.0,
            "criterion 2 (merge frequency): FAIL — full share must merge every tick"
        );
        worst = worst.max(cq_ratio);
    }
    println!(
        "criterion 2 (merge frequency): PASS — worst ratio {worst:.3} < 0.2, full share = 1.0"
    );
}

#[test]
fn criterion_03_coverage() {
    let batch = standard_batch();
    let reached = batch
        .runs
        .iter()
        .filter(|(_, cq, _, _)| cq.final_exploration_pct >= 95.0 && cq.iterations < T_MAX)
        .count();
    assert!(
        reached >= 9,
        "criterion 3 (coverage): FAIL — only {reached}/10 seeds reached 95%"
    );
    let min = batch
        .runs
        .iter()
        .map(|(_, cq, _, _)| cq.final_exploration_pct)
        .fold(f64::INFINITY, f64::min);
    println!("criterion 3 (coverage): PASS — {reached}/10 seeds >= 95% (min {min:.2}%)");
}

#[test]
fn criterion_04_overlap_advantage() {
    let batch = standard_batch();
    let cq = mean(batch.runs.iter().map(|(_, cq, _, _)| cq.final_overlap_pct));
    let greedy = mean(batch.runs.iter().map(|(_, _, _, gr)| gr.final_overlap_pct));
    assert!(
        cq < greedy,
        "criterion 4 (overlap advantage): FAIL — cqlite {cq:.2}% vs greedy {greedy:.2}%"
    );
    println!(
        "criterion 4 (overlap advantage): PASS — cqlite mean {cq:.2}% < greedy mean {greedy:.2}%"
    );
}

#[test]
fn criterion_05_q_update_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_err = 0.0f64;
    for i in 0..1000 {
        let prior: f64 = rng.random_range(-50.0..50.0);
        let reward: f64 = rng.random_range(-20.0..20.0);
        let next: f64 = rng.random_range(-50.0..50.0);
        let alpha: f64 = rng.random_range(0.001..=1.0);
        let gamma: f64 = rng.random_range(0.0..0.999);

        let mut table = QTable::new(RobotId(0));
        let s = StateId::from_cell(Cell::new(1, 1));
        let s_next = StateId::from_cell(Cell::new(2, 2));
        table.apply_remote(s, prior).unwrap();
        table.apply_remote(s_next, next).unwrap();
        let params = LearnerParams {
            alpha,
            gamma,
            ..LearnerParams::default()
        };
        let got = table.q_update(s, reward, Some(s_next), &params).unwrap();
        // Direct update arithmetic.
        let expected = (1.0 - alpha) * prior + alpha * (reward + gamma * next);
        let err = (got - expected).abs();
        max_err = max_err.max(err);
        assert!(
            err <= 1e-12,
            "criterion 5 (q-update correctness): FAIL — tuple {i} err {err:e}"
        );
    }

    // Full-overwrite limit is exact.
    for reward in [-3.25f64, 0.0, 7.5, 123.456] {
        let exact = bellman_update(42.0, reward, 9.0, 1.0, 0.0);
        assert_eq!(exact, reward, "criterion 5: alpha=1, gamma=0 must be exact");
    }
    // Dyadic fixed point is exact: q = 4, gamma = 0.5, r = q(1 - gamma).
    assert_eq!(bellman_update(4.0, 2.0, 4.0, 0.5, 0.5), 4.0);
    // General fixed point to 1e-12.
    let q = 1.7;
    let gamma = 0.95;
    let fixed = bellman_update(q, q * (1.0 - gamma), q, 0.6, gamma);
    assert!((fixed - q).abs() <= 1e-12);

    println!("criterion 5 (q-update correctness): PASS — max error {max_err:e} over 1000 tuples");
}

#[test]
fn criterion_06_bellman_convergence() {
    // Frozen 5-state MDP with deterministic successor sets.
    let successors: [&[usize]; 5] = [&[1, 4], &[2], &[3, 0], &[4], &[0, 2]];
    let rewards = [0.5, -1.0, 2.0, 0.0, 1.25];
    let params = LearnerParams {
        alpha: 0.6,
        gamma: 0.95,
        ..LearnerParams::default()
    };

    // Value-iteration oracle, run to numerical rest.
    let mut v = [0.0f64; 5];
    for _ in 0..20_000 {
        let mut next = [0.0f64; 5];
        for s in 0..5 {
            let best = successors[s]
                .iter()
                .map(|&n| v[n])
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = rewards[s] + params.gamma * best;
        }
        v = next;
    }

    let ids: Vec<StateId> = (0..5)
        .map(|i| StateId::from_cell(Cell::new(i, 0)))
        .collect();
    let mut table = QTable::new(RobotId(0));
    let mut converged_at = None;
    for sweep in 1..=10_000usize {
        for s in 0..5 {
            let next_max = successors[s]
                .iter()
                .map(|&n| table.get(ids[n]))
                .fold(f64::NEG_INFINITY, f64::max);
            table
                .q_update_with_next(ids[s], rewards[s], next_max, &params)
                .unwrap();
        }
        let err = (0..5)
            .map(|s| (table.get(ids[s]) - v[s]).abs())
            .fold(0.0f64, f64::max);
        if err < 1e-6 {
            converged_at = Some((sweep, err));
            break;
        }
    }
    let (sweep, err) = converged_at
        .expect("criterion 6 (bellman convergence): FAIL — no convergence in 10^4 sweeps");
    println!(
        "criterion 6 (bellman convergence): PASS — fixed point within {err:e} after {sweep} sweeps"
    );
}

#[test]
fn criterion_07_convergence_bound_diagnostic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let t = rng.random_range(1..60usize);
        let deltas: Vec<f64> = (0..t - 1).map(|_| rng.random_range(0.0..=1.0)).collect();
        let e_1 = rng.random_range(0.0..50.0);
        let mut prev = f64::INFINITY;
        for e in [0.01, 0.1, 0.3, 0.6, 0.9] {
            let bound = convergence_bound(&deltas, e_1, e, 0.95).unwrap();
            assert!(bound.is_finite(), "criterion 7: FAIL — non-finite bound");
            assert!(
                bound <= prev + 1e-12,
                "criterion 7: FAIL — bound not nonincreasing in confidence"
            );
            prev = bound;
        }
    }

    // Independent product-evaluation oracle at delta == 0: psi_i evaluates to
    // prod_{j=t-i}^{t-1} j / prod_{j=t-i}^{t} j, and the weight on E_1 is 1/t.
    for t in [2usize, 3, 5, 17, 40] {
        let zeros = vec![0.0; t - 1];
        let e = 0.25f64;
        let e_1 = 12.5;
        let mut sum_psi_sq = 0.0;
        for i in 1..t {
            let mut num = 1.0f64;
            for j in (t - i)..t {
                num *= j as f64; // j + gamma * 0
            }
            let mut den = 1.0f64;
            for j in (t - i)..=t {
                den *= j as f64;
            }
            let psi = num / den;
            sum_psi_sq += psi * psi;
        }
        let oracle = e_1 / t as f64 + ((1.0 / e).ln() * sum_psi_sq / 2.0).sqrt();
        let got = convergence_bound(&zeros, e_1, e, 0.95).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-9,
            "criterion 7: FAIL — t={t}: got {got}, oracle {oracle}"
        );
    }
    println!("criterion 7 (convergence bound diagnostic): PASS — 100 sequences, zero-delta oracle to 1e-9");
}

/// Dijkstra oracle that tracks exact (straight, diagonal) step counts.
/// Distinct count pairs can never collide in length (sqrt 2 is irrational),
/// so pair equality certifies exact optimality.
fn dijkstra_steps(map: &LocalMap, start: Cell, goal: Cell) -> Option<(u32, u32)> {
    let dims = map.dims();
    let n = dims.cell_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut steps = vec![(0u32, 0u32); n];
    let mut done = vec![false; n];
    dist[dims.index(start)] = 0.0;
    loop {
        let mut best = usize::MAX;
        let mut bd = f64::INFINITY;
        for i in 0..n {
            if !done[i] && dist[i] < bd {
                best = i;
                bd = dist[i];
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
                let diagonal = dx != 0 && dy != 0;
                let w = if diagonal { SQRT_2 } else { 1.0 };
                let ni = dims.index(nb);
                if dist[best] + w < dist[ni] {
                    dist[ni] = dist[best] + w;
                    steps[ni] = if diagonal {
                        (steps[best].0, steps[best].1 + 1)
                    } else {
                        (steps[best].0 + 1, steps[best].1)
                    };
                }
            }
        }
    }
    let gi = dims.index(goal);
    dist[gi].is_finite().then_some(steps[gi])
}

#[test]
fn criterion_08_planner_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut solved = 0usize;
    while solved < 200 {
        let side = 15usize;
        let dims = Dims::new(side, side, 0.1);
        let mut map = LocalMap::new(dims);
        let mut scan = ScanResult::default();
        let mut free = Vec::new();
        for y in 0..side as i32 {
            for x in 0..side as i32 {
                let border = x == 0 || y == 0 || x == side as i32 - 1 || y == side as i32 - 1;
                let c = Cell::new(x, y);
                if border || rng.random_range(0..100) < 28 {
                    scan.occupied.push(c);
                } else {
                    scan.free.push(c);
                    free.push(c);
                }
            }
        }
        if free.len() < 2 {
            continue;
        }
        map.integrate_scan(&scan).unwrap();
        let start = free[rng.random_range(0..free.len())];
        let goal = free[rng.random_range(0..free.len())];
        let Some(oracle) = dijkstra_steps(&map, start, goal) else {
            // Unsolvable instance: the planner must agree, then resample.
            assert_eq!(astar_path(&map, start, goal).unwrap(), None);
            continue;
        };
        let path = astar_path(&map, start, goal)
            .unwrap()
            .expect("oracle says reachable");
        let mut straight = 0u32;
        let mut diagonal = 0u32;
        for w in path.cells.windows(2) {
            if w[0].x != w[1].x && w[0].y != w[1].y {
                diagonal += 1;
            } else {
                straight += 1;
            }
        }
        assert_eq!(
            (straight, diagonal),
            oracle,
            "criterion 8 (planner optimality): FAIL — step counts diverge"
        );
        solved += 1;
    }
    println!("criterion 8 (planner optimality): PASS — 200 solvable instances, exact step counts");
}

#[test]
fn criterion_09_frontier_and_overlap_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    for _ in 0..100 {
        let side = rng.random_range(8..20usize);
        let dims = Dims::new(side, side, 0.1);
        let mut map = LocalMap::new(dims);
        let mut scan = ScanResult::default();
        for y in 0..side as i32 {
            for x in 0..side as i32 {
                let c = Cell::new(x, y);
                match rng.random_range(0..3) {
                    0 => scan.free.push(c),
                    1 => scan.occupied.push(c),
                    _ => {}
                }
            }
        }
        map.integrate_scan(&scan).unwrap();

        let mut expected = Vec::new();
        for i in 0..dims.cell_count() {
            let cell = dims.cell_at(i);
            if map.state(cell) != CellState::Free {
                continue;
            }
            let mut unknown = false;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nb = Cell::new(cell.x + dx, cell.y + dy);
                    if dims.contains(nb) && map.state(nb) == CellState::Unknown {
                        unknown = true;
                    }
                }
            }
            if unknown {
                expected.push(cell);
            }
        }
        assert_eq!(
            detect_frontiers(&map),
            expected,
            "criterion 9: FAIL — frontier predicate mismatch"
        );
    }

    for _ in 0..100 {
        let entries: Vec<Cell> = (0..rng.random_range(1..15usize))
            .map(|_| Cell::new(rng.random_range(0..80), rng.random_range(0..80)))
            .collect();
        let mut es = ExploredSet::new();
        for &cell in &entries {
            es.insert_received(StateId::from_cell(cell), cell);
        }
        let candidate = Cell::new(rng.random_range(0..80), rng.random_range(0..80));
        let r_is = rng.random_range(0.3..3.0);
        let resolution = 0.1;

        // Direct evaluation: indicator sum over entries divided by their count.
        let unique: std::collections::BTreeSet<Cell> = entries.iter().copied().collect();
        let within = unique
            .iter()
            .filter(|cell| {
                let dx = (candidate.x - cell.x) as f64;
                let dy = (candidate.y - cell.y) as f64;
                (dx * dx + dy * dy).sqrt() * resolution <= r_is
            })
            .count();
        let direct = within as f64 / unique.len() as f64;
        let got = overlap_probability(candidate, &es, r_is, resolution);
        assert_eq!(
            got, direct,
            "criterion 9: FAIL — overlap probability mismatch"
        );
    }
    println!("criterion 9 (frontier/overlap definitions): PASS — 100 maps and 100 overlap instances, exact");
}

#[test]
fn criterion_10_voronoi_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let robots = rng.random_range(1..5usize);
        let states = rng.random_range(1..12usize);
        let n = robots + states;
        let mut times = vec![vec![0.0f64; n]; n];
        for (p, row) in times.iter_mut().enumerate() {
            for (q, value) in row.iter_mut().enumerate() {
                if p != q {
                    *value = if rng.random_range(0..10) == 0 {
                        f64::INFINITY
                    } else {
                        rng.random_range(0.0..100.0)
                    };
                }
            }
        }
        let tau = cqlite_core::planner::TauMatrix { times };
        let robot_rows: Vec<usize> = (0..robots).collect();
        let state_cols: Vec<usize> = (robots..n).collect();
        let part = cqlite_core::partition::voronoi_partition(&tau, &robot_rows, &state_cols);

        for &q in &state_cols {
            // Column argmin oracle (first minimizer wins ties).
            let mut best: Option<(usize, f64)> = None;
            for r in 0..robots {
                let t = tau.at(r, q);
                if t.is_finite() {
                    match best {
                        Some((_, bt)) if bt <= t => {}
                        _ => best = Some((r, t)),
                    }
                }
            }
            match best {
                Some((r, _)) => assert!(
                    part.cells[r].contains(&q),
                    "criterion 10: FAIL — state {q} not in argmin robot {r}'s cell"
                ),
                None => assert!(part.unassigned.contains(&q)),
            }
        }
    }

    // Engine-side partition/cover validation runs every tick; the standard
    // batch must report zero violations.
    let batch = standard_batch();
    for (seed, cq, fs, _) in &batch.runs {
        assert_eq!(
            cq.partition_violations, 0,
            "criterion 10: FAIL — seed {seed}"
        );
        assert_eq!(
            fs.partition_violations, 0,
            "criterion 10: FAIL — seed {seed}"
        );
    }
    println!(
        "criterion 10 (voronoi partition): PASS — 50 matrices vs argmin oracle, 0 tick violations"
    );
}

#[test]
fn criterion_11_determinism() {
    let dir = std::env::temp_dir().join(format!("cqlite_acceptance_{}", std::process::id()));
    let map_path = dir.join("world.txt");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&map_path, generate_map(50, 50, 0.2, 4242).unwrap()).unwrap();

    let mut scenario = ScenarioConfig::with_defaults(map_path, 3, BASE_SEED);
    scenario.trials = 2;
    scenario.policies = vec![Policy::Cqlite, Policy::GreedyFrontier, Policy::FullShare];
    scenario.r_s = 0.6;

    scenario.out_dir = dir.join("a");
    let first = run_trials(&scenario, true).unwrap();
    scenario.out_dir = dir.join("b");
    let second = run_trials(&scenario, true).unwrap();

    assert_eq!(first.files_written.len(), second.files_written.len());
    let mut compared = 0usize;
    for (a, b) in first.files_written.iter().zip(&second.files_written) {
        assert_eq!(a.file_name(), b.file_name());
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert_eq!(
            bytes_a,
            bytes_b,
            "criterion 11 (determinism): FAIL — {} differs between runs",
            a.display()
        );
        compared += 1;
    }
    std::fs::remove_dir_all(&dir).ok();
    println!("criterion 11 (determinism): PASS — {compared} output files byte-identical");
}

#[test]
fn criterion_12_reward_convergence_analog() {
    let batch = standard_batch();
    let threshold = 0.05f64;
    let deadline = T_MAX / 2;
    let mut converged = 0usize;
    let mut latest = 0usize;
    for (_, cq, _, _) in &batch.runs {
        // First tick after which every later fleet-max |dQ| stays below the
        // threshold.
        let dq = &cq.max_q_delta_per_tick;
        let mut settle = dq.len();
        for t in (0..dq.len()).rev() {
            if dq[t] >= threshold {
                settle = t + 1;
                break;
            }
            settle = t;
        }
        if settle <= deadline {
            converged += 1;
        }
        latest = latest.max(settle);
    }
    assert!(
        converged >= 8,
        "criterion 12 (reward convergence analog): FAIL — {converged}/10 seeds settled by tick {deadline}"
    );
    println!(
        "criterion 12 (reward convergence analog): PASS — {converged}/10 seeds settled (latest at tick {latest})"
    );
}
