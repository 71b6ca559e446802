//! Global velocity and pressure spaces with their dof maps.
//!
//! Velocity: continuous `Q_r` (optionally with two bubbles per cell), both
//! components sharing one scalar dof map. Vector dofs are interleaved:
//! global dof `2 * s + c` is component `c` of scalar dof `s`. Scalar `Q_r`
//! node `(I, J)` of the `(r n + 1)^2` lattice gets index `J (r n + 1) + I`;
//! bubble dofs follow all lattice nodes, two per cell.
//!
//! Pressure: discontinuous `P_{r-1}`, dofs contiguous per cell.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::element::{ElementFamily, ReferenceElement, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::TensorRule;
use crate::Point;

#[derive(Debug, Clone)]
pub struct VelocitySpace {
    mesh: Arc<Mesh>,
    element: ReferenceElement,
    lattice_side: usize,
    num_lattice: usize,
    scalar_dim: usize,
    cell_dofs: Vec<usize>,
    boundary: Vec<usize>,
}

impl VelocitySpace {
    pub fn new(mesh: Arc<Mesh>, r: usize, enriched: bool) -> Result<Self> {
        let family = if enriched {
            ElementFamily::QrBubble
        } else {
            ElementFamily::Qr
        };
        let element = ReferenceElement::new(family, r)?;
        let n = mesh.cells_per_side();
        let side = r * n + 1;
        let num_lattice = side * side;
        let nloc = element.local_dim();
        let mut cell_dofs = Vec::with_capacity(mesh.num_cells() * nloc);
        for cell in 0..mesh.num_cells() {
            let (cx, cy) = mesh.cell_coords(cell);
            for b in 0..=r {
                for a in 0..=r {
                    cell_dofs.push((r * cy + b) * side + r * cx + a);
                }
            }
            if enriched {
                cell_dofs.push(num_lattice + 2 * cell);
                cell_dofs.push(num_lattice + 2 * cell + 1);
            }
        }
        let boundary = (0..num_lattice)
            .filter(|&s| {
                let (i, j) = (s % side, s / side);
                i == 0 || j == 0 || i == side - 1 || j == side - 1
            })
            .collect();
        let scalar_dim = num_lattice + if enriched { 2 * mesh.num_cells() } else { 0 };
        Ok(Self {
            mesh,
            element,
            lattice_side: side,
            num_lattice,
            scalar_dim,
            cell_dofs,
            boundary,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn element(&self) -> &ReferenceElement {
        &self.element
    }

    pub fn order(&self) -> usize {
        self.element.order()
    }

    pub fn is_enriched(&self) -> bool {
        self.element.family() == ElementFamily::QrBubble
    }

    /// Dimension per velocity component.
    pub fn scalar_dim(&self) -> usize {
        self.scalar_dim
    }

    /// Total number of (vector) velocity dofs.
    pub fn dim(&self) -> usize {
        2 * self.scalar_dim
    }

    pub fn local_dim(&self) -> usize {
        self.element.local_dim()
    }

    /// Global scalar dofs of a cell in local shape-function order.
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.local_dim();
        &self.cell_dofs[cell * n..(cell + 1) * n]
    }

    /// Scalar dofs whose defining node lies on the boundary, ascending.
    pub fn boundary_scalar_dofs(&self) -> &[usize] {
        &self.boundary
    }

    /// Vector dofs constrained by Dirichlet data, ascending.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        self.boundary.iter().flat_map(|&s| [2 * s, 2 * s + 1]).collect()
    }

    pub fn is_bubble(&self, scalar_dof: usize) -> bool {
        scalar_dof >= self.num_lattice
    }

    /// Physical coordinates of a lattice node; `None` for bubble dofs.
    pub fn node_coords(&self, scalar_dof: usize) -> Option<Point> {
        if self.is_bubble(scalar_dof) {
            return None;
        }
        let denom = (self.lattice_side - 1) as f64;
        let (i, j) = (scalar_dof % self.lattice_side, scalar_dof / self.lattice_side);
        Some([i as f64 / denom, j as f64 / denom])
    }

    /// Gather the local vector coefficients `[u_x(a), u_y(a)]` of a cell.
    pub fn gather(&self, coeffs: &[f64], cell: usize, out: &mut [[f64; 2]]) {
        for (o, &s) in out.iter_mut().zip(self.cell_dofs(cell)) {
            *o = [coeffs[2 * s], coeffs[2 * s + 1]];
        }
    }

    /// Velocity value at a reference point of a cell.
    pub fn evaluate(&self, coeffs: &[f64], cell: usize, xhat: Point) -> [f64; 2] {
        let (values, _) = self.element.evaluate(xhat);
        let mut out = [0.0; 2];
        for (v, &s) in values.iter().zip(self.cell_dofs(cell)) {
            out[0] += v * coeffs[2 * s];
            out[1] += v * coeffs[2 * s + 1];
        }
        out
    }

    /// Values of `g(node, t)` at every constrained vector dof.
    pub fn dirichlet_values(
        &self,
        g: impl Fn(Point, f64) -> [f64; 2],
        t: f64,
    ) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.boundary.len());
        for &s in &self.boundary {
            let x = self.node_coords(s).expect("boundary dofs are lattice nodes");
            let v = g(x, t);
            out.push((2 * s, v[0]));
            out.push((2 * s + 1, v[1]));
        }
        out
    }

    /// Nodal interpolant; with bubbles, their coefficients are the cellwise
    /// L2 best fit of what the nodal part leaves over.
    pub fn interpolate(&self, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.dim()];
        for s in 0..self.num_lattice {
            let v = f(self.node_coords(s).unwrap());
            coeffs[2 * s] = v[0];
            coeffs[2 * s + 1] = v[1];
        }
        if self.is_enriched() {
            let rule = TensorRule::gauss(self.order() + 3);
            let tab = self.element.tabulate(&rule);
            let nb = self.element.num_nodal();
            for cell in 0..self.mesh.num_cells() {
                self.fit_bubbles(&mut coeffs, cell, &rule, &tab, nb, &f);
            }
        }
        coeffs
    }

    fn fit_bubbles(
        &self,
        coeffs: &mut [f64],
        cell: usize,
        rule: &TensorRule,
        tab: &Tabulation,
        nb: usize,
        f: &impl Fn(Point) -> [f64; 2],
    ) {
        let map = self.mesh.cell_map(cell);
        let dofs = self.cell_dofs(cell);
        let mut gram = Matrix2::zeros();
        let mut rhs = [Vector2::zeros(), Vector2::zeros()];
        for (q, (&p, &w)) in rule.points().iter().zip(rule.weights()).enumerate() {
            let phi = tab.values(q);
            let exact = f(map.apply(p));
            let mut nodal = [0.0; 2];
            for a in 0..nb {
                nodal[0] += phi[a] * coeffs[2 * dofs[a]];
                nodal[1] += phi[a] * coeffs[2 * dofs[a] + 1];
            }
            let b = Vector2::new(phi[nb], phi[nb + 1]);
            gram += w * b * b.transpose();
            for c in 0..2 {
                rhs[c] += w * (exact[c] - nodal[c]) * b;
            }
        }
        let chol = gram.cholesky().expect("bubble Gram matrix is SPD");
        for (c, r) in rhs.iter().enumerate() {
            let x = chol.solve(r);
            coeffs[2 * dofs[nb] + c] = x[0];
            coeffs[2 * dofs[nb + 1] + c] = x[1];
        }
    }
}

#[derive(Debug, Clone)]
pub struct PressureSpace {
    mesh: Arc<Mesh>,
    element: ReferenceElement,
}

impl PressureSpace {
    pub fn new(mesh: Arc<Mesh>, r: usize) -> Result<Self> {
        let element = ReferenceElement::new(ElementFamily::PrDisc, r)?;
        Ok(Self { mesh, element })
    }

    pub fn element(&self) -> &ReferenceElement {
        &self.element
    }

    pub fn local_dim(&self) -> usize {
        self.element.local_dim()
    }

    pub fn dim(&self) -> usize {
        self.mesh.num_cells() * self.local_dim()
    }

    pub fn cell_dofs(&self, cell: usize) -> std::ops::Range<usize> {
        let n = self.local_dim();
        cell * n..(cell + 1) * n
    }

    /// Coefficients of the global constant `value` (first mode is `1`).
    pub fn constant(&self, value: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for cell in 0..self.mesh.num_cells() {
            p[self.cell_dofs(cell).start] = value;
        }
        p
    }

    pub fn evaluate(&self, coeffs: &[f64], cell: usize, xhat: Point) -> f64 {
        let (values, _) = self.element.evaluate(xhat);
        values
            .iter()
            .zip(&coeffs[self.cell_dofs(cell)])
            .map(|(v, c)| v * c)
            .sum()
    }
}

/// Velocity/pressure pair on a common mesh.
pub fn build_spaces(mesh: Arc<Mesh>, r: usize, enriched: bool) -> Result<(VelocitySpace, PressureSpace)> {
    if r < 2 {
        return Err(Error::invalid(format!(
            "velocity order r = {r} too small for the Q_r / P_(r-1) pair (need r >= 2)"
        )));
    }
    let velocity = VelocitySpace::new(mesh.clone(), r, enriched)?;
    let pressure = PressureSpace::new(mesh, r)?;
    Ok((velocity, pressure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(Mesh::uniform(level).unwrap())
    }

    #[test]
    fn level_one_dimensions() {
        let (v, p) = build_spaces(mesh(1), 2, true).unwrap();
        assert_eq!(v.scalar_dim(), 33);
        assert_eq!(p.dim(), 12);
        let (v, _) = build_spaces(mesh(1), 2, false).unwrap();
        assert_eq!(v.scalar_dim(), 25);
        assert!(build_spaces(mesh(1), 1, false).is_err());
    }

    #[test]
    fn boundary_dof_count() {
        for level in 1..4 {
            for r in 2..=4 {
                let (v, _) = build_spaces(mesh(level), r, true).unwrap();
                let side = r * (1 << level) + 1;
                assert_eq!(v.boundary_dofs().len(), 2 * (4 * side - 4));
                for &s in v.boundary_scalar_dofs() {
                    let x = v.node_coords(s).unwrap();
                    assert!(x[0] == 0.0 || x[0] == 1.0 || x[1] == 0.0 || x[1] == 1.0);
                }
            }
        }
    }

    #[test]
    fn shared_nodes_have_matching_coordinates() {
        let (v, _) = build_spaces(mesh(2), 3, true).unwrap();
        let m = v.mesh();
        for cell in 0..m.num_cells() {
            let map = m.cell_map(cell);
            let nodes = v.element().nodes();
            for (a, &s) in v.cell_dofs(cell).iter().enumerate().take(nodes.len()) {
                let x = map.apply(nodes[a]);
                let y = v.node_coords(s).unwrap();
                assert_abs_diff_eq!(x[0], y[0], epsilon = 1e-14);
                assert_abs_diff_eq!(x[1], y[1], epsilon = 1e-14);
            }
            let dofs = v.cell_dofs(cell);
            assert!(v.is_bubble(dofs[dofs.len() - 1]) && v.is_bubble(dofs[dofs.len() - 2]));
        }
    }

    #[test]
    fn interpolation_reproduces_qr() {
        let f = |x: Point| [x[0] * x[0] * x[1] - 0.3 * x[1], 1.0 + x[0] * x[1] * x[1]];
        let (v, _) = build_spaces(mesh(2), 2, true).unwrap();
        let u = v.interpolate(f);
        for cell in [0, 5, 15] {
            for p in [[0.33, -0.2], [-0.9, 0.71]] {
                let val = v.evaluate(&u, cell, p);
                let ex = f(v.mesh().cell_map(cell).apply(p));
                assert_abs_diff_eq!(val[0], ex[0], epsilon = 1e-13);
                assert_abs_diff_eq!(val[1], ex[1], epsilon = 1e-13);
            }
        }
        // bubbles untouched for functions inside Q_r
        for s in v.scalar_dim() - 2..v.scalar_dim() {
            assert_abs_diff_eq!(u[2 * s], 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn edge_traces_agree() {
        let (v, _) = build_spaces(mesh(1), 3, true).unwrap();
        let u: Vec<f64> = (0..v.dim()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        // cell 0 right edge vs cell 1 left edge; cell 0 top vs cell 2 bottom
        for s in [-0.8, -0.1, 0.45, 0.93] {
            let a = v.evaluate(&u, 0, [1.0, s]);
            let b = v.evaluate(&u, 1, [-1.0, s]);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
            let a = v.evaluate(&u, 0, [s, 1.0]);
            let b = v.evaluate(&u, 2, [s, -1.0]);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn pressure_cells_independent_and_constant_representable() {
        let (_, p) = build_spaces(mesh(2), 3, true).unwrap();
        let one = p.constant(1.0);
        for cell in 0..16 {
            assert_abs_diff_eq!(p.evaluate(&one, cell, [0.2, -0.7]), 1.0, epsilon = 1e-15);
        }
        let mut q: Vec<f64> = (0..p.dim()).map(|i| i as f64 * 0.1).collect();
        let before: Vec<f64> = (0..16).map(|c| p.evaluate(&q, c, [0.1, 0.4])).collect();
        for i in p.cell_dofs(7) {
            q[i] += 1.0;
        }
        for c in 0..16 {
            let after = p.evaluate(&q, c, [0.1, 0.4]);
            if c != 7 {
                assert_eq!(after, before[c]);
            } else {
                assert!(after != before[c]);
            }
        }
    }

    #[test]
    fn dirichlet_values_homogeneous_and_corner() {
        let (v, _) = build_spaces(mesh(1), 2, true).unwrap();
        let vals = v.dirichlet_values(|_, _| [0.0, 0.0], 0.3);
        assert!(vals.iter().all(|&(_, x)| x == 0.0));
        assert_eq!(vals.len(), 2 * 16);
        let pi = std::f64::consts::PI;
        let g = |x: Point, t: f64| {
            [
                t.sin() * (pi * x[0]).sin() * (pi * x[1]).sin(),
                t.sin() * (pi * x[0]).cos() * (pi * x[1]).cos(),
            ]
        };
        let vals = v.dirichlet_values(g, pi / 2.0);
        // scalar dof 0 is the corner (0, 0)
        assert_eq!(vals[0], (0, 0.0));
        assert_eq!(vals[1], (1, 1.0));
    }
}
