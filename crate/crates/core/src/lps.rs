//! One-level local projection stabilization.
//!
//! `pi_K` is the L2(K) projection onto `D(K) = P_{r-1}(K)` and
//! `kappa_K = id - pi_K` the fluctuation operator. The stabilization form is
//!
//! ```text
//! S_h(v, w) = sum_K mu_K (kappa_K grad v, kappa_K grad w)_K
//! ```
//!
//! with `kappa_K` acting on each of the four gradient entries.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::element::{ElementFamily, ReferenceElement, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::CellMap;
use crate::quadrature::TensorRule;
use crate::sparse::SparseMatrix;
use crate::spaces::VelocitySpace;

/// Stabilization parameters `mu_K >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum StabParams {
    Uniform(f64),
    PerCell(Vec<f64>),
}

impl StabParams {
    pub fn uniform(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("stabilization parameter must be >= 0, got {mu}")));
        }
        Ok(StabParams::Uniform(mu))
    }

    pub fn per_cell(mu: Vec<f64>) -> Result<Self> {
        if mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("stabilization parameters must be >= 0"));
        }
        Ok(StabParams::PerCell(mu))
    }

    pub fn mu(&self, cell: usize) -> f64 {
        match self {
            StabParams::Uniform(m) => *m,
            StabParams::PerCell(v) => v[cell],
        }
    }

    /// `mu = 0` everywhere: plain Galerkin.
    pub fn is_off(&self) -> bool {
        match self {
            StabParams::Uniform(m) => *m == 0.0,
            StabParams::PerCell(v) => v.iter().all(|m| *m == 0.0),
        }
    }
}

/// L2 projection onto `P_{r-1}(K)` realized at the points of a tensor
/// Gauss rule.
///
/// All cells of a uniform mesh are translates of each other, so one
/// projector serves every cell.
#[derive(Debug, Clone)]
pub struct LocalProjector {
    element: ReferenceElement,
    table: Tabulation,
    weights: Vec<f64>,
    half_edge: f64,
    gram: Cholesky<f64, Dyn>,
}

impl LocalProjector {
    /// `projection_order` is `r`, i.e. the projection space is `P_{r-1}`.
    pub fn new(cell: &CellMap, projection_order: usize, rule: &TensorRule) -> Result<Self> {
        let element = ReferenceElement::new(ElementFamily::PrDisc, projection_order)?;
        if 2 * rule.points_per_direction() < 2 * (projection_order - 1) + 1 {
            return Err(Error::invalid("quadrature too coarse for the projection space"));
        }
        let table = element.tabulate(rule);
        let det = cell.det_jacobian();
        let weights: Vec<f64> = rule.weights().iter().map(|w| w * det).collect();
        let n = element.local_dim();
        let mut g = DMatrix::zeros(n, n);
        for (q, &w) in weights.iter().enumerate() {
            let p = table.values(q);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] += w * p[i] * p[j];
                }
            }
        }
        let gram = Cholesky::new(g).expect("Gram matrix of P_(r-1) on a square is SPD");
        Ok(Self {
            element,
            table,
            weights,
            half_edge: cell.half_edge,
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.element.local_dim()
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    /// Physical quadrature weights of the cell.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn half_edge(&self) -> f64 {
        self.half_edge
    }

    fn moments(&self, values: &[f64]) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim());
        for (q, (&w, &v)) in self.weights.iter().zip(values).enumerate() {
            for (m, p) in self.table.values(q).iter().enumerate() {
                b[m] += w * v * p;
            }
        }
        b
    }

    /// Coefficients of `pi_K g` for `g` sampled at the quadrature points.
    pub fn project(&self, values: &[f64]) -> DVector<f64> {
        self.gram.solve(&self.moments(values))
    }

    /// `pi_K g` at the quadrature points.
    pub fn projection(&self, values: &[f64]) -> Vec<f64> {
        let c = self.project(values);
        (0..self.num_points())
            .map(|q| self.table.values(q).iter().zip(c.iter()).map(|(p, c)| p * c).sum())
            .collect()
    }

    /// `kappa_K g = g - pi_K g` at the quadrature points.
    pub fn fluctuation(&self, values: &[f64]) -> Vec<f64> {
        let proj = self.projection(values);
        values.iter().zip(proj).map(|(v, p)| v - p).collect()
    }

    /// `||kappa_K g||^2_K`.
    pub fn fluctuation_norm_sq(&self, values: &[f64]) -> f64 {
        let b = self.moments(values);
        let full: f64 = self.weights.iter().zip(values).map(|(w, v)| w * v * v).sum();
        full - b.dot(&self.gram.solve(&b))
    }

    /// Scalar block `L[(s, t)] = sum_l (kappa d_l psi_s, kappa d_l psi_t)_K`
    /// for a shape-function tabulation on the same rule.
    pub fn stabilization_block(&self, basis: &Tabulation) -> DMatrix<f64> {
        let n = basis.num_functions;
        let scale = 1.0 / self.half_edge;
        let mut out = DMatrix::zeros(n, n);
        for l in 0..2 {
            let g = DMatrix::from_fn(self.num_points(), n, |q, s| basis.grads(q)[s][l] * scale);
            // moments b[m, s] = (d_l psi_s, p_m)
            let mut b = DMatrix::zeros(self.dim(), n);
            for q in 0..self.num_points() {
                let w = self.weights[q];
                for (m, p) in self.table.values(q).iter().enumerate() {
                    for s in 0..n {
                        b[(m, s)] += w * p * g[(q, s)];
                    }
                }
            }
            let wg = DMatrix::from_fn(self.num_points(), n, |q, s| self.weights[q] * g[(q, s)]);
            let full = g.transpose() * wg;
            let proj = b.transpose() * self.gram.solve(&b);
            out += full - proj;
        }
        out
    }
}

/// Global `S` on vector velocity dofs: `v^T S w = S_h(v_h, w_h)`.
pub fn assemble_sh(
    velocity: &VelocitySpace,
    projector: &LocalProjector,
    basis: &Tabulation,
    params: &StabParams,
) -> Result<SparseMatrix> {
    let n = velocity.dim();
    if params.is_off() {
        return SparseMatrix::from_triplets(n, n, &[]);
    }
    let block = projector.stabilization_block(basis);
    let nloc = velocity.local_dim();
    let mut entries = Vec::with_capacity(velocity.mesh().num_cells() * 2 * nloc * nloc);
    for cell in 0..velocity.mesh().num_cells() {
        let mu = params.mu(cell);
        if mu == 0.0 {
            continue;
        }
        let dofs = velocity.cell_dofs(cell);
        for (a, &sa) in dofs.iter().enumerate() {
            for (b, &sb) in dofs.iter().enumerate() {
                let v = mu * block[(a, b)];
                entries.push((2 * sa, 2 * sb, v));
                entries.push((2 * sa + 1, 2 * sb + 1, v));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &entries)
}
