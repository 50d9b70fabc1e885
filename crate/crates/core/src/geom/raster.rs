//! Grid rasterization with a single deterministic cell-membership rule:
//! a cell belongs to a shape iff its center does.

use std::collections::BTreeSet;

use super::{GeomError, Polygon, Polyline};

/// Cell indices as (row, col) pairs; rows index the x axis, cols the y axis.
pub type CellSet = BTreeSet<(usize, usize)>;

/// Uniform grid. `origin` is the outer corner of cell (0, 0); cell (r, c)
/// covers `[origin.x + r*res, origin.x + (r+1)*res) x [origin.y + c*res, ...)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], resolution: f64, rows: usize, cols: usize) -> Result<Self, GeomError> {
        if !(resolution > 0.0) {
            return Err(GeomError::NonPositiveResolution(resolution));
        }
        if rows == 0 || cols == 0 {
            return Err(GeomError::EmptyGrid { rows, cols });
        }
        Ok(Self { origin, resolution, rows, cols })
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (row as f64 + 0.5) * self.resolution,
            self.origin[1] + (col as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell containing a point under half-open binning, or None if outside.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let r = (p[0] - self.origin[0]) / self.resolution;
        let c = (p[1] - self.origin[1]) / self.resolution;
        if r < 0.0 || c < 0.0 {
            return None;
        }
        let (r, c) = (r.floor() as usize, c.floor() as usize);
        if r >= self.rows || c >= self.cols {
            return None;
        }
        Some((r, c))
    }

    /// Rows/cols whose centers could fall inside the given world-space bbox.
    fn clip_range(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<(usize, usize, usize, usize)> {
        let r0 = ((lo[0] - self.origin[0]) / self.resolution - 1.0).floor().max(0.0) as usize;
        let c0 = ((lo[1] - self.origin[1]) / self.resolution - 1.0).floor().max(0.0) as usize;
        let r1f = (hi[0] - self.origin[0]) / self.resolution + 1.0;
        let c1f = (hi[1] - self.origin[1]) / self.resolution + 1.0;
        if r1f < 0.0 || c1f < 0.0 || r0 >= self.rows || c0 >= self.cols {
            return None;
        }
        let r1 = (r1f.ceil() as usize).min(self.rows - 1);
        let c1 = (c1f.ceil() as usize).min(self.cols - 1);
        Some((r0, r1, c0, c1))
    }
}

/// Cells whose center lies inside the polygon (boundary inclusive).
pub fn rasterize_polygon(poly: &Polygon, grid: &GridSpec) -> CellSet {
    let mut out = CellSet::new();
    let (lo, hi) = poly.bbox();
    let Some((r0, r1, c0, c1)) = grid.clip_range(lo, hi) else {
        return out;
    };
    for r in r0..=r1 {
        for c in c0..=c1 {
            if poly.contains(grid.cell_center(r, c)) {
                out.insert((r, c));
            }
        }
    }
    out
}

/// Cells whose center is within `width / 2` of the polyline.
pub fn rasterize_polyline(line: &Polyline, grid: &GridSpec) -> CellSet {
    let mut out = CellSet::new();
    let half = line.width() / 2.0;
    let (mut lo, mut hi) = line.bbox();
    lo[0] -= half;
    lo[1] -= half;
    hi[0] += half;
    hi[1] += half;
    let Some((r0, r1, c0, c1)) = grid.clip_range(lo, hi) else {
        return out;
    };
    for r in r0..=r1 {
        for c in c0..=c1 {
            if line.distance(grid.cell_center(r, c)) <= half {
                out.insert((r, c));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_covering_grid_fills_all_cells() {
        let grid = GridSpec::new([0.0, 0.0], 0.5, 4, 3).unwrap();
        let poly = Polygon::rect(-1.0, -1.0, 10.0, 10.0);
        assert_eq!(rasterize_polygon(&poly, &grid).len(), 12);
    }

    #[test]
    fn polygon_outside_grid_is_empty() {
        let grid = GridSpec::new([0.0, 0.0], 0.5, 4, 3).unwrap();
        let poly = Polygon::rect(50.0, 50.0, 51.0, 51.0);
        assert!(rasterize_polygon(&poly, &grid).is_empty());
    }

    #[test]
    fn unit_square_on_fifth_grid() {
        // Centers at 0.1..0.9 in both axes all fall inside [0,1]^2.
        let grid = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let poly = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        let cells = rasterize_polygon(&poly, &grid);
        let expect: CellSet = (0..5).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
        assert_eq!(cells, expect);
    }

    #[test]
    fn horizontal_segment_covers_one_row() {
        let grid = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let line = Polyline::new(vec![[0.0, 0.1], [1.0, 0.1]], 0.2).unwrap();
        let cells = rasterize_polyline(&line, &grid);
        let expect: CellSet = (0..5).map(|r| (r, 0)).collect();
        assert_eq!(cells, expect);
    }

    #[test]
    fn polyline_outside_grid_is_empty() {
        let grid = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let line = Polyline::new(vec![[30.0, 30.0], [31.0, 30.0]], 0.2).unwrap();
        assert!(rasterize_polyline(&line, &grid).is_empty());
    }

    #[test]
    fn duplicate_vertices_do_not_change_raster() {
        let grid = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let a = Polyline::new(vec![[0.0, 0.1], [1.0, 0.1]], 0.2).unwrap();
        let b = Polyline::new(vec![[0.0, 0.1], [0.0, 0.1], [1.0, 0.1], [1.0, 0.1]], 0.2).unwrap();
        assert_eq!(rasterize_polyline(&a, &grid), rasterize_polyline(&b, &grid));
    }

    #[test]
    fn half_open_binning_drops_upper_edge() {
        let grid = GridSpec::new([0.0, 0.0], 1.0, 2, 2).unwrap();
        assert_eq!(grid.cell_of([0.0, 0.0]), Some((0, 0)));
        assert_eq!(grid.cell_of([2.0, 1.0]), None);
        assert_eq!(grid.cell_of([1.999, 1.999]), Some((1, 1)));
    }
}
