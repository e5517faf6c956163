//! Ground-truth environment: occupancy grid, map file I/O, and range-sensor
//! simulation via ray casting.

use thiserror::Error;

use crate::grid::{supercover_walk, Cell, Dims};

/// Default metric resolution (meters per cell). Chosen so the stock sensor
/// radii map to integer cell counts.
pub const DEFAULT_RESOLUTION: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}, column {column}: unknown map character {found:?}")]
    UnknownCharacter {
        line: usize,
        column: usize,
        found: char,
    },
    #[error("line {line}: row has {found} cells, expected {expected}")]
    NonRectangular {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error(
        "line {line}, column {column}: border cell is not occupied (environment must be closed)"
    )]
    OpenBorder { line: usize, column: usize },
    #[error("map body has {found} rows, header declares {expected}")]
    MissingRows { found: usize, expected: usize },
    #[error("grid must be at least 1x1 with positive resolution")]
    InvalidDimensions,
    #[error("pose ({x:.3}, {y:.3}) lies in an occupied cell")]
    PoseOccupied { x: f64, y: f64 },
    #[error("pose ({x:.3}, {y:.3}) lies outside the grid")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("invalid PGM: {0}")]
    InvalidPgm(String),
}

/// Immutable ground-truth occupancy world.
///
/// The border is always fully occupied: exploration happens in a closed
/// environment, so a scan can never leave the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    dims: Dims,
    occupied: Vec<bool>,
}

impl GroundTruthGrid {
    /// Builds a grid from row-major occupancy flags, validating the closed
    /// border and minimum size.
    pub fn new(dims: Dims, occupied: Vec<bool>) -> Result<Self, WorldError> {
        if dims.width < 1 || dims.height < 1 || dims.resolution <= 0.0 {
            return Err(WorldError::InvalidDimensions);
        }
        assert_eq!(occupied.len(), dims.cell_count());
        let grid = Self { dims, occupied };
        for y in 0..dims.height {
            for x in 0..dims.width {
                let border = x == 0 || y == 0 || x == dims.width - 1 || y == dims.height - 1;
                if border && !grid.is_occupied(Cell::new(x as i32, y as i32)) {
                    return Err(WorldError::OpenBorder {
                        line: y + 2, // body starts on line 2 of the text format
                        column: x + 1,
                    });
                }
            }
        }
        Ok(grid)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[self.dims.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_occupied(cell)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.dims.cell_count())
            .filter(|&i| !self.occupied[i])
            .map(|i| self.dims.cell_at(i))
    }

    pub fn free_cell_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| !o).count()
    }

    /// Renders the grid back to the ASCII map format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dims.width, self.dims.height);
        for y in 0..self.dims.height {
            for x in 0..self.dims.width {
                out.push(if self.is_occupied(Cell::new(x as i32, y as i32)) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Omnidirectional range-sensor parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorParams {
    /// Maximum sensing range in meters.
    pub range_m: f64,
    /// Number of evenly spaced rays in the scan.
    pub ray_count: usize,
}

impl SensorParams {
    pub fn new(range_m: f64, ray_count: usize) -> Self {
        assert!(range_m > 0.0, "sensor range must be positive");
        assert!(ray_count >= 8, "a scan needs at least 8 rays");
        Self { range_m, ray_count }
    }
}

/// Robot pose in the global metric frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub active: bool,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            active: true,
        }
    }

    pub fn at_cell(dims: &Dims, cell: Cell) -> Self {
        let (x, y) = dims.point_of_cell(cell);
        Self::new(x, y, 0.0)
    }

    pub fn cell(&self, dims: &Dims) -> Cell {
        dims.cell_of_point(self.x, self.y)
    }
}

/// Wraps an angle into [-pi, pi).
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if a >= std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Cells observed by one scan, split by what the sensor saw.
///
/// Both lists are sorted by cell key and deduplicated, so equal scans
/// compare equal structurally.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanResult {
    pub free: Vec<Cell>,
    pub occupied: Vec<Cell>,
}

impl ScanResult {
    pub fn observed_count(&self) -> usize {
        self.free.len() + self.occupied.len()
    }
}

/// Parses the ASCII map format: a "W H" header line, then H rows of W
/// characters from {'#', '.'}.
pub fn load_map(content: &str) -> Result<GroundTruthGrid, WorldError> {
    load_map_with_resolution(content, DEFAULT_RESOLUTION)
}

pub fn load_map_with_resolution(
    content: &str,
    resolution: f64,
) -> Result<GroundTruthGrid, WorldError> {
    let mut lines = content.lines();
    let header = lines.next().ok_or(WorldError::MalformedHeader {
        line: 1,
        reason: "empty input".into(),
    })?;
    let mut parts = header.split_whitespace();
    let width: usize =
        parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| WorldError::MalformedHeader {
                line: 1,
                reason: format!("expected \"W H\", got {header:?}"),
            })?;
    let height: usize =
        parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| WorldError::MalformedHeader {
                line: 1,
                reason: format!("expected \"W H\", got {header:?}"),
            })?;
    if parts.next().is_some() {
        return Err(WorldError::MalformedHeader {
            line: 1,
            reason: "trailing tokens after \"W H\"".into(),
        });
    }
    if width < 1 || height < 1 {
        return Err(WorldError::InvalidDimensions);
    }

    let mut occupied = Vec::with_capacity(width * height);
    let mut rows = 0usize;
    for (row, line) in lines.enumerate() {
        if rows == height {
            if line.trim().is_empty() {
                continue;
            }
            return Err(WorldError::MissingRows {
                found: rows + 1,
                expected: height,
            });
        }
        if line.chars().count() != width {
            return Err(WorldError::NonRectangular {
                line: row + 2,
                found: line.chars().count(),
                expected: width,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            match ch {
                '#' => occupied.push(true),
                '.' => occupied.push(false),
                other => {
                    return Err(WorldError::UnknownCharacter {
                        line: row + 2,
                        column: col + 1,
                        found: other,
                    })
                }
            }
        }
        rows += 1;
    }
    if rows != height {
        return Err(WorldError::MissingRows {
            found: rows,
            expected: height,
        });
    }
    GroundTruthGrid::new(Dims::new(width, height, resolution), occupied)
}

/// Parses a binary PGM (P5). Pixel values <= 127 become occupied cells.
pub fn load_pgm(bytes: &[u8], resolution: f64) -> Result<GroundTruthGrid, WorldError> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, WorldError> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(WorldError::InvalidPgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err(WorldError::InvalidPgm("missing P5 magic".into()));
    }
    let width: usize = token(bytes)?
        .parse()
        .map_err(|_| WorldError::InvalidPgm("bad width".into()))?;
    let height: usize = token(bytes)?
        .parse()
        .map_err(|_| WorldError::InvalidPgm("bad height".into()))?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| WorldError::InvalidPgm("bad maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(WorldError::InvalidPgm(format!(
            "unsupported maxval {maxval}"
        )));
    }
    pos += 1; // single whitespace byte after maxval
    let pixels = &bytes[pos..];
    if pixels.len() < width * height {
        return Err(WorldError::InvalidPgm(format!(
            "pixel data has {} bytes, expected {}",
            pixels.len(),
            width * height
        )));
    }
    let occupied = pixels[..width * height].iter().map(|&p| p <= 127).collect();
    GroundTruthGrid::new(Dims::new(width, height, resolution), occupied)
}

/// Simulates one omnidirectional scan from `pose`.
///
/// Rays are cast at `ray_count` evenly spaced world-frame angles and walked
/// with supercover grid traversal. Along each ray, free cells the ray passes
/// through within range are observed free; the first occupied cell blocks
/// the ray and is observed occupied if its center is within range. Occupied
/// cells are also sensed when a ray grazes their corner (a wall edge is
/// visible edge-on), but a grazing touch never marks a free cell. Nothing
/// past the first hit or the range limit is reported. Pure function: equal
/// inputs give equal scans.
pub fn raycast_scan(
    grid: &GroundTruthGrid,
    pose: &Pose,
    params: &SensorParams,
) -> Result<ScanResult, WorldError> {
    let dims = grid.dims();
    if pose.x < 0.0
        || pose.y < 0.0
        || pose.x >= dims.width as f64 * dims.resolution
        || pose.y >= dims.height as f64 * dims.resolution
    {
        return Err(WorldError::PoseOutOfBounds {
            x: pose.x,
            y: pose.y,
        });
    }
    let origin_cell = pose.cell(&dims);
    if grid.is_occupied(origin_cell) {
        return Err(WorldError::PoseOccupied {
            x: pose.x,
            y: pose.y,
        });
    }

    let range_cells = params.range_m / dims.resolution;
    let origin = (pose.x / dims.resolution, pose.y / dims.resolution);

    let mut free = vec![false; dims.cell_count()];
    let mut occ = vec![false; dims.cell_count()];
    let within_range = |cell: Cell| {
        let (cx, cy) = cell.center();
        let dx = cx - origin.0;
        let dy = cy - origin.1;
        (dx * dx + dy * dy).sqrt() <= range_cells + 1e-9
    };

    for k in 0..params.ray_count {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / params.ray_count as f64;
        let end = (
            origin.0 + range_cells * angle.cos(),
            origin.1 + range_cells * angle.sin(),
        );
        supercover_walk(origin, end, |cell, grazed| {
            if !dims.contains(cell) {
                return false;
            }
            if grid.is_occupied(cell) {
                if within_range(cell) {
                    occ[dims.index(cell)] = true;
                }
                return false;
            }
            if !grazed && within_range(cell) {
                free[dims.index(cell)] = true;
            }
            true
        });
    }

    free[dims.index(origin_cell)] = true;
    let collect = |mask: &[bool]| {
        mask.iter()
            .enumerate()
            .filter(|&(_, &v)| v)
            .map(|(i, _)| dims.cell_at(i))
            .collect::<Vec<_>>()
    };
    Ok(ScanResult {
        free: collect(&free),
        occupied: collect(&occ),
    })
}
