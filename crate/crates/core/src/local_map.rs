//! Per-robot tri-state occupancy map, exact-frame map fusion, and map-quality
//! metrics (coverage fraction, SSIM).

use thiserror::Error;

use crate::grid::{Cell, Dims};
use crate::network::RobotId;
use crate::world::{GroundTruthGrid, ScanResult};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("cell index {index} out of bounds for {width}x{height} map")]
    OutOfBounds {
        index: usize,
        width: usize,
        height: usize,
    },
    #[error("map is {map_w}x{map_h} but ground truth is {truth_w}x{truth_h}")]
    DimensionMismatch {
        map_w: usize,
        map_h: usize,
        truth_w: usize,
        truth_h: usize,
    },
    #[error("SSIM window {window} invalid for {width}x{height} map (need 2 <= window <= min dim)")]
    BadWindow {
        window: usize,
        width: usize,
        height: usize,
    },
}

/// Tri-state occupancy knowledge for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

impl CellState {
    /// Conflict rule used by both scan integration and map merging:
    /// occupied beats free beats unknown. Idempotent and commutative, so
    /// merges converge regardless of arrival order.
    fn fuse(self, observed: CellState) -> CellState {
        match (self, observed) {
            (CellState::Occupied, _) | (_, CellState::Occupied) => CellState::Occupied,
            (CellState::Free, _) | (_, CellState::Free) => CellState::Free,
            _ => CellState::Unknown,
        }
    }
}

/// Sparse list of known cells shared between robots on request.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPatch {
    pub source: RobotId,
    /// (row-major cell index, observed state); states are never Unknown.
    pub entries: Vec<(u32, CellState)>,
}

impl MapPatch {
    /// Wire size of the entry block: 4-byte index plus 1-byte state each.
    pub fn byte_size(&self) -> usize {
        self.entries.len() * 5
    }
}

/// A robot's private map of the world, in the shared global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    dims: Dims,
    cells: Vec<CellState>,
    version: u64,
    known: usize,
}

impl LocalMap {
    pub fn new(dims: Dims) -> Self {
        Self {
            cells: vec![CellState::Unknown; dims.cell_count()],
            dims,
            version: 0,
            known: 0,
        }
    }

    /// All-unknown map sharing the ground truth's frame.
    pub fn matching(truth: &GroundTruthGrid) -> Self {
        Self::new(truth.dims())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn state(&self, cell: Cell) -> CellState {
        self.cells[self.dims.index(cell)]
    }

    pub fn state_at(&self, index: usize) -> CellState {
        self.cells[index]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.state(cell) == CellState::Free
    }

    pub fn known_count(&self) -> usize {
        self.known
    }

    pub fn unknown_count(&self) -> usize {
        self.dims.cell_count() - self.known
    }

    fn set_fused(&mut self, index: usize, observed: CellState) {
        let prev = self.cells[index];
        let next = prev.fuse(observed);
        if next != prev {
            if prev == CellState::Unknown {
                self.known += 1;
            }
            self.cells[index] = next;
        }
    }

    /// Applies one scan. Free observations mark cells free, occupied
    /// observations mark them occupied, and occupied always wins a conflict.
    /// The version advances even when no cell changes.
    pub fn integrate_scan(&mut self, scan: &ScanResult) -> Result<(), MapError> {
        let bound = self.dims.cell_count();
        for cell in scan.free.iter().chain(scan.occupied.iter()) {
            if !self.dims.contains(*cell) {
                return Err(MapError::OutOfBounds {
                    index: (cell.y as i64 * self.dims.width as i64 + cell.x as i64).unsigned_abs()
                        as usize,
                    width: self.dims.width,
                    height: self.dims.height,
                });
            }
            debug_assert!(self.dims.index(*cell) < bound);
        }
        for cell in &scan.free {
            let idx = self.dims.index(*cell);
            self.set_fused(idx, CellState::Free);
        }
        for cell in &scan.occupied {
            let idx = self.dims.index(*cell);
            self.set_fused(idx, CellState::Occupied);
        }
        self.version += 1;
        Ok(())
    }

    /// Merges a received patch with the same fusion rule as scan integration.
    pub fn merge_patch(&mut self, patch: &MapPatch) -> Result<(), MapError> {
        let bound = self.dims.cell_count();
        if let Some(&(index, _)) = patch.entries.iter().find(|(i, _)| *i as usize >= bound) {
            return Err(MapError::OutOfBounds {
                index: index as usize,
                width: self.dims.width,
                height: self.dims.height,
            });
        }
        for &(index, state) in &patch.entries {
            debug_assert_ne!(state, CellState::Unknown);
            self.set_fused(index as usize, state);
        }
        self.version += 1;
        Ok(())
    }

    /// Sparse patch of every known cell, in ascending index order.
    pub fn known_cells_patch(&self, source: RobotId) -> MapPatch {
        let entries = self
            .cells
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != CellState::Unknown)
            .map(|(i, s)| (i as u32, *s))
            .collect();
        MapPatch { source, entries }
    }

    /// Exports the map as a binary PGM: 0 = occupied, 128 = unknown,
    /// 255 = free.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.dims.width, self.dims.height).into_bytes();
        out.extend(self.cells.iter().map(|s| match s {
            CellState::Occupied => 0u8,
            CellState::Unknown => 128,
            CellState::Free => 255,
        }));
        out
    }
}

/// Fraction of ground-truth cells this map knows correctly.
pub fn coverage_fraction(map: &LocalMap, truth: &GroundTruthGrid) -> Result<f64, MapError> {
    let (md, td) = (map.dims(), truth.dims());
    if !md.same_shape(&td) {
        return Err(MapError::DimensionMismatch {
            map_w: md.width,
            map_h: md.height,
            truth_w: td.width,
            truth_h: td.height,
        });
    }
    let mut matching = 0usize;
    for idx in 0..td.cell_count() {
        let truth_occupied = truth.is_occupied(td.cell_at(idx));
        match map.state_at(idx) {
            CellState::Unknown => {}
            CellState::Free if !truth_occupied => matching += 1,
            CellState::Occupied if truth_occupied => matching += 1,
            _ => {}
        }
    }
    Ok(matching as f64 / td.cell_count() as f64)
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_DYNAMIC_RANGE: f64 = 1.0;

fn raster_value(state: CellState) -> f64 {
    match state {
        CellState::Occupied => 0.0,
        CellState::Unknown => 0.5,
        CellState::Free => 1.0,
    }
}

/// Mean structural similarity between a local map and the ground truth.
///
/// Both grids are rasterized to {0, 0.5, 1} (occupied / unknown / free) and
/// compared over every dense `window`-sized square, with the standard
/// stabilizing constants. Unknown cells land mid-gray so unexplored area
/// drags the score down.
pub fn map_ssim(map: &LocalMap, truth: &GroundTruthGrid, window: usize) -> Result<f64, MapError> {
    let (md, td) = (map.dims(), truth.dims());
    if !md.same_shape(&td) {
        return Err(MapError::DimensionMismatch {
            map_w: md.width,
            map_h: md.height,
            truth_w: td.width,
            truth_h: td.height,
        });
    }
    if window < 2 || window > md.width || window > md.height {
        return Err(MapError::BadWindow {
            window,
            width: md.width,
            height: md.height,
        });
    }

    let a: Vec<f64> = (0..md.cell_count())
        .map(|i| raster_value(map.state_at(i)))
        .collect();
    let b: Vec<f64> = (0..td.cell_count())
        .map(|i| {
            if truth.is_occupied(td.cell_at(i)) {
                0.0
            } else {
                1.0
            }
        })
        .collect();

    let c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE).powi(2);
    let n = (window * window) as f64;

    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(md.height - window) {
        for wx in 0..=(md.width - window) {
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            let mut sum_aa = 0.0;
            let mut sum_bb = 0.0;
            let mut sum_ab = 0.0;
            for dy in 0..window {
                let row = (wy + dy) * md.width + wx;
                for dx in 0..window {
                    let va = a[row + dx];
                    let vb = b[row + dx];
                    sum_a += va;
                    sum_b += vb;
                    sum_aa += va * va;
                    sum_bb += vb * vb;
                    sum_ab += va * vb;
                }
            }
            let mu_a = sum_a / n;
            let mu_b = sum_b / n;
            let var_a = sum_aa / n - mu_a * mu_a;
            let var_b = sum_bb / n - mu_b * mu_b;
            let cov = sum_ab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
