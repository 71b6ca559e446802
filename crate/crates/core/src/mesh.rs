//! Uniform quadrilateral meshes of the unit square.

use crate::error::{Error, Result};
use crate::Point;

/// One square cell; vertices counter-clockwise from the lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub vertex_ids: [usize; 4],
}

/// Affine map from the reference square `(-1, 1)^2` onto a cell.
///
/// For axis-aligned squares the Jacobian is `half_edge * I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMap {
    pub center: Point,
    pub half_edge: f64,
}

impl CellMap {
    pub fn apply(&self, xhat: Point) -> Point {
        [
            self.center[0] + self.half_edge * xhat[0],
            self.center[1] + self.half_edge * xhat[1],
        ]
    }

    /// Diagonal of the (constant) Jacobian.
    pub fn jacobian(&self) -> [f64; 2] {
        [self.half_edge, self.half_edge]
    }

    pub fn det_jacobian(&self) -> f64 {
        self.half_edge * self.half_edge
    }

    pub fn inverse(&self, x: Point) -> Point {
        [
            (x[0] - self.center[0]) / self.half_edge,
            (x[1] - self.center[1]) / self.half_edge,
        ]
    }
}

/// Uniform partition of `(0,1)^2` into `4^level` congruent squares.
///
/// Cells and vertices are numbered row-major (x fastest).
#[derive(Debug, Clone)]
pub struct Mesh {
    level: u32,
    cells_per_side: usize,
    edge_length: f64,
    vertices: Vec<Point>,
    cells: Vec<Cell>,
}

impl Mesh {
    pub fn uniform(level: u32) -> Result<Self> {
        if level < 1 {
            return Err(Error::invalid("mesh level must be at least 1"));
        }
        if level > 12 {
            return Err(Error::invalid(format!("mesh level {level} is too large")));
        }
        let n = 1usize << level;
        let edge_length = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                // Integer ratio keeps boundary coordinates exactly 0 or 1.
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut cells = Vec::with_capacity(n * n);
        for cy in 0..n {
            for cx in 0..n {
                let ll = cy * (n + 1) + cx;
                cells.push(Cell {
                    index: cy * n + cx,
                    vertex_ids: [ll, ll + 1, ll + n + 2, ll + n + 1],
                });
            }
        }
        Ok(Self {
            level,
            cells_per_side: n,
            edge_length,
            vertices,
            cells,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    /// Edge length `2^-level`; used as the mesh parameter `h` in EOC tables.
    pub fn edge_length(&self) -> f64 {
        self.edge_length
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Column and row of a cell in the `n x n` grid.
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.cells_per_side, cell / self.cells_per_side)
    }

    pub fn cell_map(&self, cell: usize) -> CellMap {
        let (cx, cy) = self.cell_coords(cell);
        let h = self.edge_length;
        CellMap {
            center: [(cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h],
            half_edge: 0.5 * h,
        }
    }

    /// `F_K(xhat)` and the diagonal of its Jacobian.
    pub fn reference_map(&self, cell: &Cell, xhat: Point) -> (Point, [f64; 2]) {
        let map = self.cell_map(cell.index);
        (map.apply(xhat), map.jacobian())
    }
}
