//! Shared raster geometry for every per-cell layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned world rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Bounds { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Cell index `(column, row)`; row-major storage index is `row * width + column`.
pub type Cell = (usize, usize);

/// Resolution, origin and size of a raster. Two layers are aligned iff their
/// geometries compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub resolution: f64,
    pub origin: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(resolution: f64, origin: (f64, f64), width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidBounds(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidBounds(format!("empty grid {width}x{height}")));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::InvalidBounds("non-finite origin".into()));
        }
        Ok(GridGeometry { resolution, origin, width, height })
    }

    /// Grid covering `bounds`; partial cells at the max edge are included.
    pub fn from_bounds(bounds: Bounds, resolution: f64) -> Result<Self> {
        let finite = [bounds.min_x, bounds.min_y, bounds.max_x, bounds.max_y].iter().all(|v| v.is_finite());
        if !finite || bounds.width() <= 0.0 || bounds.height() <= 0.0 {
            return Err(Error::InvalidBounds(format!("{bounds:?}")));
        }
        if !(resolution > 0.0) {
            return Err(Error::InvalidBounds(format!("resolution must be positive, got {resolution}")));
        }
        // tolerate float noise so 10.0 / 0.025 gives 400, not 401
        let w = ((bounds.width() / resolution) - 1e-9).ceil().max(1.0) as usize;
        let h = ((bounds.height() / resolution) - 1e-9).ceil().max(1.0) as usize;
        GridGeometry::new(resolution, (bounds.min_x, bounds.min_y), w, h)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.width as f64 * self.resolution,
            self.origin.1 + self.height as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    #[inline]
    pub fn cell_of_index(&self, idx: usize) -> Cell {
        (idx % self.width, idx / self.width)
    }

    /// Floor-maps a world coordinate to its cell; `None` outside the grid.
    #[inline]
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = (x - self.origin.0) / self.resolution;
        let fy = (y - self.origin.1) / self.resolution;
        // truncation equals floor for the non-negative values kept here
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64) {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    #[inline]
    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            self.origin.0 + (cell.0 as f64 + 0.5) * self.resolution,
            self.origin.1 + (cell.1 as f64 + 0.5) * self.resolution,
        )
    }

    #[inline]
    pub fn contains_signed(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height
    }

    /// In-grid 8-neighbours of `cell`.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const OFFSETS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        OFFSETS.iter().filter_map(move |&(dx, dy)| {
            let nx = cell.0 as i64 + dx;
            let ny = cell.1 as i64 + dy;
            self.contains_signed(nx, ny).then_some((nx as usize, ny as usize))
        })
    }

    pub fn ensure_aligned(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LayerMismatch(format!("{what}: {self:?} vs {other:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_bounds_counts_cells_without_float_creep() {
        let g = GridGeometry::from_bounds(Bounds::new(0.0, 0.0, 10.0, 5.0), 0.025).unwrap();
        assert_eq!((g.width, g.height), (400, 200));
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(matches!(
            GridGeometry::from_bounds(Bounds::new(1.0, 0.0, 1.0, 5.0), 0.1),
            Err(Error::InvalidBounds(_))
        ));
        assert!(GridGeometry::from_bounds(Bounds::new(0.0, 0.0, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn floor_mapping_on_cell_boundary() {
        let g = GridGeometry::new(0.5, (0.0, 0.0), 4, 4).unwrap();
        assert_eq!(g.world_to_cell(0.5, 0.0), Some((1, 0)));
        assert_eq!(g.world_to_cell(0.4999, 1.0), Some((0, 2)));
        assert_eq!(g.world_to_cell(2.0, 0.0), None);
        assert_eq!(g.world_to_cell(-0.01, 0.0), None);
    }
}
