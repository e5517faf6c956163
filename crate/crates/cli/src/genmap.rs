//! Seeded generation of closed indoor-style worlds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GenMapError {
    #[error("map must be at least 8x8 cells, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("obstacle density {0} outside [0, 0.4]")]
    BadDensity(f64),
    #[error("could not generate a connected map after {0} attempts")]
    Unsatisfiable(usize),
}

const MAX_ATTEMPTS: usize = 100;

/// Generates the text of a closed map with seeded rectangular obstacles.
///
/// Obstacles are thin bars (shorter side of 1 or 2 cells) kept one cell
/// apart from each other and two cells off the border, so every occupied
/// cell stays visible from free space and the free region stays one
/// 4-connected component. The density target is approximate: placement
/// stops once the obstacle area reaches `density` times the interior, or
/// the placement budget runs out. Same seed, same text.
pub fn generate_map(
    width: usize,
    height: usize,
    density: f64,
    seed: u64,
) -> Result<String, GenMapError> {
    if width < 8 || height < 8 {
        return Err(GenMapError::TooSmall { width, height });
    }
    if !(0.0..=0.4).contains(&density) {
        return Err(GenMapError::BadDensity(density));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let grid = scatter_obstacles(width, height, density, &mut rng);
        if free_region_is_connected(&grid, width, height) {
            let mut text = format!("{width} {height}\n");
            for y in 0..height {
                for x in 0..width {
                    text.push(if grid[y * width + x] { '#' } else { '.' });
                }
                text.push('\n');
            }
            return Ok(text);
        }
    }
    Err(GenMapError::Unsatisfiable(MAX_ATTEMPTS))
}

fn scatter_obstacles(width: usize, height: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut occupied = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                occupied[y * width + x] = true;
            }
        }
    }

    let interior = (width - 2) * (height - 2);
    let target = (density * interior as f64).round() as usize;
    let mut placed = 0usize;
    let mut budget = target * 20 + 50;
    while placed < target && budget > 0 {
        budget -= 1;
        let horizontal: bool = rng.random();
        let thin = rng.random_range(1..=2usize);
        let long = rng.random_range(2..=6usize);
        let (w, h) = if horizontal {
            (long, thin)
        } else {
            (thin, long)
        };
        if width < w + 4 || height < h + 4 {
            continue;
        }
        let x0 = rng.random_range(2..width - 1 - w);
        let y0 = rng.random_range(2..height - 1 - h);

        // Keep one free cell around every bar so obstacles never fuse into
        // thick blocks and the free region cannot be pinched shut.
        let mut blocked = false;
        'scan: for y in y0.saturating_sub(1)..(y0 + h + 1).min(height) {
            for x in x0.saturating_sub(1)..(x0 + w + 1).min(width) {
                let border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
                if !border && occupied[y * width + x] {
                    blocked = true;
                    break 'scan;
                }
            }
        }
        if blocked {
            continue;
        }
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                occupied[y * width + x] = true;
            }
        }
        placed += w * h;
    }
    occupied
}

fn free_region_is_connected(occupied: &[bool], width: usize, height: usize) -> bool {
    let free_count = occupied.iter().filter(|&&o| !o).count();
    if free_count == 0 {
        return false;
    }
    let start = occupied.iter().position(|&o| !o).unwrap();
    let mut seen = vec![false; occupied.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 1usize;
    while let Some(idx) = stack.pop() {
        let x = idx % width;
        let y = idx / width;
        let mut push = |nx: usize, ny: usize, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
            let n = ny * width + nx;
            if !occupied[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
                reached += 1;
            }
        };
        if x > 0 {
            push(x - 1, y, &mut stack, &mut seen);
        }
        if x + 1 < width {
            push(x + 1, y, &mut stack, &mut seen);
        }
        if y > 0 {
            push(x, y - 1, &mut stack, &mut seen);
        }
        if y + 1 < height {
            push(x, y + 1, &mut stack, &mut seen);
        }
    }
    reached == free_count
}

#[cfg(test)]
mod tests {
    use super::*;
    use cqlite_core::world::load_map;

    #[test]
    fn zero_density_gives_an_empty_room() {
        let text = generate_map(20, 15, 0.0, 1).unwrap();
        let grid = load_map(&text).unwrap();
        assert_eq!(grid.free_cell_count(), 18 * 13);
    }

    #[test]
    fn same_seed_gives_identical_text() {
        let a = generate_map(50, 50, 0.2, 99).unwrap();
        let b = generate_map(50, 50, 0.2, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_map(50, 50, 0.2, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_maps_load_and_stay_connected() {
        for seed in 0..8 {
            let text = generate_map(50, 50, 0.2, seed).unwrap();
            let grid = load_map(&text).unwrap();
            assert!(grid.free_cell_count() > 0);

            // Independent flood fill over the parsed grid.
            let dims = grid.dims();
            let free: Vec<usize> = (0..dims.cell_count())
                .filter(|&i| grid.is_free(dims.cell_at(i)))
                .collect();
            let mut seen = std::collections::BTreeSet::new();
            let mut stack = vec![free[0]];
            seen.insert(free[0]);
            while let Some(idx) = stack.pop() {
                let c = dims.cell_at(idx);
                for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let n = cqlite_core::Cell::new(c.x + dx, c.y + dy);
                    if dims.contains(n) && grid.is_free(n) {
                        let ni = dims.index(n);
                        if seen.insert(ni) {
                            stack.push(ni);
                        }
                    }
                }
            }
            assert_eq!(seen.len(), free.len(), "seed {seed} produced islands");
        }
    }

    #[test]
    fn density_is_roughly_honored() {
        let text = generate_map(60, 60, 0.2, 3).unwrap();
        let grid = load_map(&text).unwrap();
        let interior = 58 * 58;
        let interior_occupied = interior - grid.free_cell_count();
        let achieved = interior_occupied as f64 / interior as f64;
        assert!(achieved > 0.10, "achieved only {achieved}");
        assert!(achieved <= 0.25, "achieved {achieved}");
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert_eq!(
            generate_map(4, 50, 0.1, 0).unwrap_err(),
            GenMapError::TooSmall {
                width: 4,
                height: 50
            }
        );
        assert_eq!(
            generate_map(20, 20, 0.5, 0).unwrap_err(),
            GenMapError::BadDensity(0.5)
        );
    }
}
