//! Shared grid geometry: cells, dimensions, neighborhoods, and line traversal.

/// A single grid cell addressed by column `x` and row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Stable 64-bit key: row in the high word, column in the low word.
    /// Numeric order on keys equals (y, x) order on cells.
    pub fn key(self) -> u64 {
        ((self.y as u32 as u64) << 32) | self.x as u32 as u64
    }

    pub fn from_key(key: u64) -> Self {
        Self {
            x: (key & 0xffff_ffff) as u32 as i32,
            y: (key >> 32) as u32 as i32,
        }
    }

    /// Center of the cell in continuous cell units.
    pub fn center(self) -> (f64, f64) {
        (self.x as f64 + 0.5, self.y as f64 + 0.5)
    }

    /// Euclidean distance between cell centers, in cell units.
    pub fn distance_cells(self, other: Cell) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Grid dimensions plus metric resolution (meters per cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl Dims {
    pub fn new(width: usize, height: usize, resolution: f64) -> Self {
        Self {
            width,
            height,
            resolution,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0
            && cell.y >= 0
            && (cell.x as usize) < self.width
            && (cell.y as usize) < self.height
    }

    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        cell.y as usize * self.width + cell.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Cell containing a metric point; points on the far edge clamp inward.
    pub fn cell_of_point(&self, x_m: f64, y_m: f64) -> Cell {
        let cx = ((x_m / self.resolution).floor() as i64).clamp(0, self.width as i64 - 1);
        let cy = ((y_m / self.resolution).floor() as i64).clamp(0, self.height as i64 - 1);
        Cell::new(cx as i32, cy as i32)
    }

    /// Metric center of a cell.
    pub fn point_of_cell(&self, cell: Cell) -> (f64, f64) {
        let (cx, cy) = cell.center();
        (cx * self.resolution, cy * self.resolution)
    }

    pub fn same_shape(&self, other: &Dims) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub const NEIGHBORS_8: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// In-bounds 8-neighbors of a cell, in fixed scan order.
pub fn neighbors8(dims: &Dims, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
    NEIGHBORS_8.iter().filter_map(move |&(dx, dy)| {
        let n = Cell::new(cell.x + dx, cell.y + dy);
        dims.contains(n).then_some(n)
    })
}

/// Visits every cell a segment touches, in traversal order.
///
/// Amanatides-Woo stepping with a supercover tie rule: when the segment
/// crosses a cell corner exactly, both side cells and the diagonal cell are
/// touched, so a diagonal pair of blockers cannot be slipped through. The
/// visitor's second argument is true for such corner grazes (the segment
/// meets the cell at a single point) and false for cells the segment passes
/// through. Returning `false` stops the walk after the current crossing is
/// fully reported.
pub fn supercover_walk(
    start: (f64, f64),
    end: (f64, f64),
    mut visit: impl FnMut(Cell, bool) -> bool,
) -> bool {
    const CORNER_EPS: f64 = 1e-12;

    let (x0, y0) = start;
    let (x1, y1) = end;
    let dx = x1 - x0;
    let dy = y1 - y0;

    let mut cx = x0.floor() as i64;
    let mut cy = y0.floor() as i64;
    let end_cx = x1.floor() as i64;
    let end_cy = y1.floor() as i64;

    if !visit(Cell::new(cx as i32, cy as i32), false) {
        return false;
    }

    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };

    // Parametric distance to the next vertical/horizontal grid line.
    let mut t_max_x = if dx != 0.0 {
        let next = if dx > 0.0 { cx as f64 + 1.0 } else { cx as f64 };
        (next - x0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        let next = if dy > 0.0 { cy as f64 + 1.0 } else { cy as f64 };
        (next - y0) / dy
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dx != 0.0 {
        (1.0 / dx).abs()
    } else {
        f64::INFINITY
    };
    let t_delta_y = if dy != 0.0 {
        (1.0 / dy).abs()
    } else {
        f64::INFINITY
    };

    // Bounded by the cell-count of the segment's bounding box.
    let max_steps = (end_cx - cx).abs() + (end_cy - cy).abs() + 4;
    for _ in 0..max_steps {
        if cx == end_cx && cy == end_cy {
            return true;
        }
        if t_max_x > 1.0 && t_max_y > 1.0 {
            return true;
        }
        if (t_max_x - t_max_y).abs() < CORNER_EPS {
            // Corner crossing: both side cells and the diagonal cell are
            // touched at the same point.
            let side_a = visit(Cell::new((cx + step_x) as i32, cy as i32), true);
            let side_b = visit(Cell::new(cx as i32, (cy + step_y) as i32), true);
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
            if !side_a || !side_b {
                // Blocked at the corner; the diagonal cell still gets its
                // grazing report before the walk ends.
                visit(Cell::new(cx as i32, cy as i32), true);
                return false;
            }
            if !visit(Cell::new(cx as i32, cy as i32), false) {
                return false;
            }
            continue;
        } else if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        if !visit(Cell::new(cx as i32, cy as i32), false) {
            return false;
        }
    }
    true
}
