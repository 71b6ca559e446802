//! Finite element assembly: mass, viscous, divergence, skew-symmetric
//! convection, LPS and load terms, plus the coupled dG stage system.
//!
//! Every integral uses one tensor Gauss rule with `r + 2` points per
//! direction. Cells of a uniform mesh are congruent, so the local mass,
//! stiffness, LPS and divergence matrices are computed once and reused.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::element::Tabulation;
use crate::error::{Error, Result};
use crate::lps::{assemble_sh, LocalProjector, StabParams};
use crate::mesh::Mesh;
use crate::quadrature::TensorRule;
use crate::sparse::{LuFactorization, Pattern, SparseMatrix};
use crate::spaces::{build_spaces, PressureSpace, VelocitySpace};
use crate::temporal::SlabCoefficients;
use crate::Point;

/// Velocity values and physical gradients (`grad[c][d] = d_d u_c`) of a
/// discrete field at the quadrature points of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellField {
    pub values: Vec<[f64; 2]>,
    pub grads: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone)]
struct LocalOperators {
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    lps: DMatrix<f64>,
    /// `div[(p, 2a + c)] = (phi_p, d_c psi_a)_K`
    div: DMatrix<f64>,
    pressure_mass: Vec<f64>,
}

/// Spaces, quadrature and viscosity/stabilization data of one spatial
/// discretization.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Arc<Mesh>,
    velocity: VelocitySpace,
    pressure: PressureSpace,
    rule: TensorRule,
    vtab: Tabulation,
    ptab: Tabulation,
    projector: LocalProjector,
    weights: Vec<f64>,
    inv_half: f64,
    nu: f64,
    stab: StabParams,
    local: LocalOperators,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>, r: usize, enriched: bool, nu: f64, stab: StabParams) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid(format!("viscosity must be positive, got {nu}")));
        }
        if let StabParams::PerCell(v) = &stab {
            if v.len() != mesh.num_cells() {
                return Err(Error::invalid("one stabilization parameter per cell required"));
            }
        }
        let (velocity, pressure) = build_spaces(mesh.clone(), r, enriched)?;
        let rule = TensorRule::gauss(r + 2);
        let vtab = velocity.element().tabulate(&rule);
        let ptab = pressure.element().tabulate(&rule);
        let map = mesh.cell_map(0);
        let projector = LocalProjector::new(&map, r, &rule)?;
        let weights: Vec<f64> = rule.weights().iter().map(|w| w * map.det_jacobian()).collect();
        let inv_half = 1.0 / map.half_edge;

        let nloc = velocity.local_dim();
        let npl = pressure.local_dim();
        let mut mass = DMatrix::zeros(nloc, nloc);
        let mut stiffness = DMatrix::zeros(nloc, nloc);
        let mut div = DMatrix::zeros(npl, 2 * nloc);
        let mut pressure_mass = vec![0.0; npl];
        for (q, &w) in weights.iter().enumerate() {
            let psi = vtab.values(q);
            let dpsi = vtab.grads(q);
            let phi = ptab.values(q);
            for s in 0..nloc {
                for t in 0..nloc {
                    mass[(s, t)] += w * psi[s] * psi[t];
                    stiffness[(s, t)] += w
                        * inv_half
                        * inv_half
                        * (dpsi[s][0] * dpsi[t][0] + dpsi[s][1] * dpsi[t][1]);
                }
            }
            for p in 0..npl {
                pressure_mass[p] += w * phi[p];
                for a in 0..nloc {
                    for c in 0..2 {
                        div[(p, 2 * a + c)] += w * phi[p] * dpsi[a][c] * inv_half;
                    }
                }
            }
        }
        // higher Legendre modes have zero mean; keep the gauge row sparse
        let scale = pressure_mass[0].abs();
        for m in pressure_mass.iter_mut() {
            if m.abs() <= 1e-12 * scale {
                *m = 0.0;
            }
        }
        let lps = projector.stabilization_block(&vtab);
        Ok(Self {
            mesh,
            velocity,
            pressure,
            rule,
            vtab,
            ptab,
            projector,
            weights,
            inv_half,
            nu,
            stab,
            local: LocalOperators {
                mass,
                stiffness,
                lps,
                div,
                pressure_mass,
            },
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn velocity(&self) -> &VelocitySpace {
        &self.velocity
    }

    pub fn pressure(&self) -> &PressureSpace {
        &self.pressure
    }

    pub fn rule(&self) -> &TensorRule {
        &self.rule
    }

    pub fn projector(&self) -> &LocalProjector {
        &self.projector
    }

    pub fn velocity_table(&self) -> &Tabulation {
        &self.vtab
    }

    pub fn pressure_table(&self) -> &Tabulation {
        &self.ptab
    }

    /// Physical quadrature weights (identical on every cell).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn stab(&self) -> &StabParams {
        &self.stab
    }

    /// Physical coordinates of the quadrature points of a cell.
    pub fn quadrature_points(&self, cell: usize) -> Vec<Point> {
        let map = self.mesh.cell_map(cell);
        self.rule.points().iter().map(|&p| map.apply(p)).collect()
    }

    /// Values and gradients of a velocity field at the quadrature points.
    pub fn cell_field(&self, coeffs: &[f64], cell: usize) -> CellField {
        let dofs = self.velocity.cell_dofs(cell);
        let nq = self.rule.len();
        let mut field = CellField {
            values: vec![[0.0; 2]; nq],
            grads: vec![[[0.0; 2]; 2]; nq],
        };
        for q in 0..nq {
            let psi = self.vtab.values(q);
            let dpsi = self.vtab.grads(q);
            let (mut v, mut g) = ([0.0; 2], [[0.0; 2]; 2]);
            for (a, &s) in dofs.iter().enumerate() {
                for c in 0..2 {
                    let u = coeffs[2 * s + c];
                    v[c] += psi[a] * u;
                    g[c][0] += dpsi[a][0] * u;
                    g[c][1] += dpsi[a][1] * u;
                }
            }
            for row in g.iter_mut() {
                row[0] *= self.inv_half;
                row[1] *= self.inv_half;
            }
            field.values[q] = v;
            field.grads[q] = g;
        }
        field
    }

    /// Pressure values at the quadrature points of a cell.
    pub fn cell_pressure(&self, coeffs: &[f64], cell: usize) -> Vec<f64> {
        let local = &coeffs[self.pressure.cell_dofs(cell)];
        (0..self.rule.len())
            .map(|q| self.ptab.values(q).iter().zip(local).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `int_Omega phi_q` for every pressure basis function.
    pub fn pressure_mean_weights(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.pressure.dim()];
        for cell in 0..self.mesh.num_cells() {
            for (k, i) in self.pressure.cell_dofs(cell).enumerate() {
                m[i] = self.local.pressure_mass[k];
            }
        }
        m
    }

    /// `int_Omega p_h`.
    pub fn pressure_integral(&self, p: &[f64]) -> f64 {
        self.pressure_mean_weights().iter().zip(p).map(|(a, b)| a * b).sum()
    }

    fn scalar_block_entries(
        &self,
        block: &DMatrix<f64>,
        scale: impl Fn(usize) -> f64,
    ) -> Vec<(usize, usize, f64)> {
        let nloc = self.velocity.local_dim();
        let mut entries = Vec::with_capacity(self.mesh.num_cells() * 2 * nloc * nloc);
        for cell in 0..self.mesh.num_cells() {
            let s_cell = scale(cell);
            let dofs = self.velocity.cell_dofs(cell);
            for (a, &sa) in dofs.iter().enumerate() {
                for (b, &sb) in dofs.iter().enumerate() {
                    let v = s_cell * block[(a, b)];
                    entries.push((2 * sa, 2 * sb, v));
                    entries.push((2 * sa + 1, 2 * sb + 1, v));
                }
            }
        }
        entries
    }

    /// Velocity mass matrix: `v^T M w = (v_h, w_h)`.
    pub fn assemble_mass(&self) -> SparseMatrix {
        let n = self.velocity.dim();
        let entries = self.scalar_block_entries(&self.local.mass, |_| 1.0);
        SparseMatrix::from_triplets(n, n, &entries).expect("valid mass pattern")
    }

    /// `(nu K, B)` with `v^T (nu K) w = nu (grad v_h, grad w_h)` and
    /// `(B v)_q = (q_h, div v_h)`.
    pub fn assemble_stokes(&self) -> (SparseMatrix, SparseMatrix) {
        let n = self.velocity.dim();
        let entries = self.scalar_block_entries(&self.local.stiffness, |_| self.nu);
        let visc = SparseMatrix::from_triplets(n, n, &entries).expect("valid stiffness pattern");
        let nloc = self.velocity.local_dim();
        let mut b = Vec::new();
        for cell in 0..self.mesh.num_cells() {
            let vd = self.velocity.cell_dofs(cell);
            for (k, p) in self.pressure.cell_dofs(cell).enumerate() {
                for (a, &s) in vd.iter().enumerate().take(nloc) {
                    for c in 0..2 {
                        b.push((p, 2 * s + c, self.local.div[(k, 2 * a + c)]));
                    }
                }
            }
        }
        let div = SparseMatrix::from_triplets(self.pressure.dim(), n, &b).expect("valid divergence pattern");
        (visc, div)
    }

    /// LPS matrix `S` on vector velocity dofs.
    pub fn assemble_stabilization(&self) -> SparseMatrix {
        assemble_sh(&self.velocity, &self.projector, &self.vtab, &self.stab).expect("valid LPS pattern")
    }

    /// Skew convection block `C[(s, t)] = 1/2 [((u.grad) psi_t, psi_s) - ((u.grad) psi_s, psi_t)]`,
    /// shared by both velocity components.
    fn local_convection(&self, field: &CellField) -> DMatrix<f64> {
        let nloc = self.velocity.local_dim();
        let mut adv = DMatrix::<f64>::zeros(nloc, nloc);
        let mut u_grad = vec![0.0; nloc];
        for (q, &w) in self.weights.iter().enumerate() {
            let psi = self.vtab.values(q);
            let dpsi = self.vtab.grads(q);
            let u = field.values[q];
            for (t, g) in u_grad.iter_mut().enumerate() {
                *g = (u[0] * dpsi[t][0] + u[1] * dpsi[t][1]) * self.inv_half;
            }
            for s in 0..nloc {
                let ws = w * psi[s];
                for t in 0..nloc {
                    adv[(s, t)] += ws * u_grad[t];
                }
            }
        }
        DMatrix::from_fn(nloc, nloc, |s, t| 0.5 * (adv[(s, t)] - adv[(t, s)]))
    }

    /// Derivative of `delta -> n(delta, u, .)`:
    /// `J[(2s + c, 2t + d)] = 1/2 sum_q w psi_t (d_d u_c psi_s - u_c d_d psi_s)`.
    fn local_convection_linearization(&self, field: &CellField) -> DMatrix<f64> {
        let nloc = self.velocity.local_dim();
        let mut j = DMatrix::<f64>::zeros(2 * nloc, 2 * nloc);
        for (q, &w) in self.weights.iter().enumerate() {
            let psi = self.vtab.values(q);
            let dpsi = self.vtab.grads(q);
            let u = field.values[q];
            let g = field.grads[q];
            for s in 0..nloc {
                let ds = [dpsi[s][0] * self.inv_half, dpsi[s][1] * self.inv_half];
                for c in 0..2 {
                    for d in 0..2 {
                        let coef = 0.5 * w * (g[c][d] * psi[s] - u[c] * ds[d]);
                        for t in 0..nloc {
                            j[(2 * s + c, 2 * t + d)] += coef * psi[t];
                        }
                    }
                }
            }
        }
        j
    }

    fn cell_blocks_to_matrix(&self, blocks: &[DMatrix<f64>], vector_block: bool) -> SparseMatrix {
        let n = self.velocity.dim();
        let mut entries = Vec::new();
        for (cell, block) in blocks.iter().enumerate() {
            let dofs = self.velocity.cell_dofs(cell);
            if vector_block {
                for (a, &sa) in dofs.iter().enumerate() {
                    for (b, &sb) in dofs.iter().enumerate() {
                        for c in 0..2 {
                            for d in 0..2 {
                                entries.push((2 * sa + c, 2 * sb + d, block[(2 * a + c, 2 * b + d)]));
                            }
                        }
                    }
                }
            } else {
                for (a, &sa) in dofs.iter().enumerate() {
                    for (b, &sb) in dofs.iter().enumerate() {
                        entries.push((2 * sa, 2 * sb, block[(a, b)]));
                        entries.push((2 * sa + 1, 2 * sb + 1, block[(a, b)]));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &entries).expect("valid convection pattern")
    }

    /// `N(u)` with `w^T N(u) v = n(u_h, v_h, w_h)`.
    pub fn assemble_convection(&self, u: &[f64]) -> SparseMatrix {
        let blocks: Vec<DMatrix<f64>> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|cell| self.local_convection(&self.cell_field(u, cell)))
            .collect();
        self.cell_blocks_to_matrix(&blocks, false)
    }

    /// Residual action `n(u_h, u_h, phi)` for every velocity basis function.
    pub fn convection_action(&self, u: &[f64]) -> Vec<f64> {
        let blocks: Vec<DMatrix<f64>> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|cell| self.local_convection(&self.cell_field(u, cell)))
            .collect();
        let mut out = vec![0.0; self.velocity.dim()];
        for (cell, c) in blocks.iter().enumerate() {
            let dofs = self.velocity.cell_dofs(cell);
            for (a, &sa) in dofs.iter().enumerate() {
                for (b, &sb) in dofs.iter().enumerate() {
                    out[2 * sa] += c[(a, b)] * u[2 * sb];
                    out[2 * sa + 1] += c[(a, b)] * u[2 * sb + 1];
                }
            }
        }
        out
    }

    /// Jacobian of `u -> n(u, u, .)`: `dN(u) delta = N(u) delta + n(delta, u, .)`.
    pub fn convection_jacobian(&self, u: &[f64]) -> SparseMatrix {
        let nloc = self.velocity.local_dim();
        let blocks: Vec<DMatrix<f64>> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|cell| {
                let field = self.cell_field(u, cell);
                let c = self.local_convection(&field);
                let mut j = self.local_convection_linearization(&field);
                for a in 0..nloc {
                    for b in 0..nloc {
                        j[(2 * a, 2 * b)] += c[(a, b)];
                        j[(2 * a + 1, 2 * b + 1)] += c[(a, b)];
                    }
                }
                j
            })
            .collect();
        self.cell_blocks_to_matrix(&blocks, true)
    }

    /// Load vector `int f(., t) . phi`.
    pub fn assemble_load<F>(&self, f: F, t: f64) -> Vec<f64>
    where
        F: Fn(Point, f64) -> [f64; 2] + Sync,
    {
        let nloc = self.velocity.local_dim();
        let locals: Vec<Vec<f64>> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|cell| {
                let mut loc = vec![0.0; 2 * nloc];
                for (q, x) in self.quadrature_points(cell).into_iter().enumerate() {
                    let fv = f(x, t);
                    if fv == [0.0, 0.0] {
                        continue;
                    }
                    let w = self.weights[q];
                    for (a, psi) in self.vtab.values(q).iter().enumerate() {
                        loc[2 * a] += w * fv[0] * psi;
                        loc[2 * a + 1] += w * fv[1] * psi;
                    }
                }
                loc
            })
            .collect();
        let mut out = vec![0.0; self.velocity.dim()];
        for (cell, loc) in locals.iter().enumerate() {
            for (a, &s) in self.velocity.cell_dofs(cell).iter().enumerate() {
                out[2 * s] += loc[2 * a];
                out[2 * s + 1] += loc[2 * a + 1];
            }
        }
        out
    }
}

/// Per-stage data of one slab: load vectors and Dirichlet values at the
/// stage times.
#[derive(Debug, Clone)]
pub struct StageData {
    pub loads: Vec<Vec<f64>>,
    pub dirichlet: Vec<Vec<(usize, f64)>>,
}

/// Block layout of the monolithic stage unknown
/// `[U^1, P^1, lambda^1, ..., U^{k+1}, P^{k+1}, lambda^{k+1}]`, where
/// `lambda^i` is the Lagrange multiplier of the zero-mean pressure gauge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub velocity_dim: usize,
    pub pressure_dim: usize,
    pub stages: usize,
}

impl StageLayout {
    pub fn block(&self) -> usize {
        self.velocity_dim + self.pressure_dim + 1
    }

    pub fn len(&self) -> usize {
        self.stages * self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.stages == 0
    }

    pub fn velocity(&self, stage: usize) -> std::ops::Range<usize> {
        let o = stage * self.block();
        o..o + self.velocity_dim
    }

    pub fn pressure(&self, stage: usize) -> std::ops::Range<usize> {
        let o = stage * self.block() + self.velocity_dim;
        o..o + self.pressure_dim
    }

    pub fn gauge(&self, stage: usize) -> usize {
        stage * self.block() + self.velocity_dim + self.pressure_dim
    }
}

/// The coupled nonlinear system of one dG(k) slab,
///
/// ```text
/// sum_j alpha_ij M U^j + tau/2 [(nu K + S) U^i + N(U^i) U^i - B^T P^i]
///     = beta_i M U^0 + tau/2 F_i
/// tau/2 (B U^i + lambda^i m) = 0,   tau/2 m . P^i = 0
/// ```
///
/// with Dirichlet rows replaced by `U^i_d = g_d(t_i)`.
pub struct StageSystem<'d> {
    disc: &'d Discretization,
    coeffs: SlabCoefficients,
    layout: StageLayout,
    constrained: Vec<bool>,
    boundary: Vec<usize>,
    pattern: Pattern,
}

/// Discrete stage fields at the quadrature points, computed once per
/// Newton iterate.
pub struct Linearization {
    fields: Vec<CellField>,
}

impl<'d> StageSystem<'d> {
    pub fn new(disc: &'d Discretization, coeffs: SlabCoefficients) -> Result<Self> {
        let layout = StageLayout {
            velocity_dim: disc.velocity.dim(),
            pressure_dim: disc.pressure.dim(),
            stages: coeffs.stages(),
        };
        let boundary = disc.velocity.boundary_dofs();
        let mut constrained = vec![false; layout.velocity_dim];
        for &d in &boundary {
            constrained[d] = true;
        }
        let mut system = Self {
            disc,
            coeffs,
            layout,
            constrained,
            boundary,
            pattern: Pattern::new(0, 0, &[])?,
        };
        let mut pairs = Vec::new();
        system.emit(1.0, None, |r, c, _| pairs.push((r, c)));
        system.pattern = Pattern::new(layout.len(), layout.len(), &pairs)?;
        Ok(system)
    }

    pub fn layout(&self) -> StageLayout {
        self.layout
    }

    pub fn coefficients(&self) -> &SlabCoefficients {
        &self.coeffs
    }

    pub fn discretization(&self) -> &Discretization {
        self.disc
    }

    /// Constrained velocity dofs (same for every stage).
    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary
    }

    /// Write the Dirichlet values of every stage into a state vector.
    pub fn apply_dirichlet(&self, x: &mut [f64], data: &StageData) {
        for (i, bc) in data.dirichlet.iter().enumerate() {
            let off = self.layout.velocity(i).start;
            for &(d, v) in bc {
                x[off + d] = v;
            }
        }
    }

    pub fn linearize(&self, x: &[f64]) -> Linearization {
        let ncells = self.disc.mesh.num_cells();
        let fields = (0..self.layout.stages * ncells)
            .into_par_iter()
            .map(|k| {
                let (i, cell) = (k / ncells, k % ncells);
                self.disc.cell_field(&x[self.layout.velocity(i)], cell)
            })
            .collect();
        Linearization { fields }
    }

    /// Full residual of the constrained stage system at `x`.
    pub fn residual(&self, lin: &Linearization, x: &[f64], u0: &[f64], tau: f64, data: &StageData) -> Vec<f64> {
        let l = self.layout;
        let disc = self.disc;
        let ncells = disc.mesh.num_cells();
        let nloc = disc.velocity.local_dim();
        let npl = disc.pressure.local_dim();
        let ht = 0.5 * tau;
        let mu_of = |cell| disc.stab.mu(cell);

        let conv: Vec<DMatrix<f64>> = (0..l.stages * ncells)
            .into_par_iter()
            .map(|k| disc.local_convection(&lin.fields[k]))
            .collect();

        let mut r = vec![0.0; l.len()];
        let mut uj = vec![vec![[0.0; 2]; nloc]; l.stages];
        let mut u0l = vec![[0.0; 2]; nloc];
        for cell in 0..ncells {
            let dofs = disc.velocity.cell_dofs(cell);
            let pd = disc.pressure.cell_dofs(cell);
            for (j, uj) in uj.iter_mut().enumerate() {
                disc.velocity.gather(&x[l.velocity(j)], cell, uj);
            }
            disc.velocity.gather(u0, cell, &mut u0l);
            let mu = mu_of(cell);
            for i in 0..l.stages {
                let c = &conv[i * ncells + cell];
                let p = &x[l.pressure(i)][pd.clone()];
                let voff = l.velocity(i).start;
                for a in 0..nloc {
                    let mut acc = [0.0; 2];
                    for b in 0..nloc {
                        let m = disc.local.mass[(a, b)];
                        let mut mix = [-self.coeffs.beta[i] * m * u0l[b][0], -self.coeffs.beta[i] * m * u0l[b][1]];
                        for (j, u) in uj.iter().enumerate() {
                            let aij = self.coeffs.alpha[(i, j)];
                            mix[0] += aij * m * u[b][0];
                            mix[1] += aij * m * u[b][1];
                        }
                        let op = disc.nu * disc.local.stiffness[(a, b)] + mu * disc.local.lps[(a, b)] + c[(a, b)];
                        acc[0] += mix[0] + ht * op * uj[i][b][0];
                        acc[1] += mix[1] + ht * op * uj[i][b][1];
                    }
                    for comp in 0..2 {
                        let bt: f64 = (0..npl).map(|k| disc.local.div[(k, 2 * a + comp)] * p[k]).sum();
                        r[voff + 2 * dofs[a] + comp] += acc[comp] - ht * bt;
                    }
                }
                let poff = l.pressure(i).start;
                for (k, gp) in pd.clone().enumerate() {
                    let mut bu = 0.0;
                    for a in 0..nloc {
                        bu += disc.local.div[(k, 2 * a)] * uj[i][a][0] + disc.local.div[(k, 2 * a + 1)] * uj[i][a][1];
                    }
                    r[poff + gp] += ht * bu;
                }
            }
        }
        let m = disc.pressure_mean_weights();
        for i in 0..l.stages {
            let voff = l.velocity(i).start;
            for (k, f) in data.loads[i].iter().enumerate() {
                r[voff + k] -= ht * f;
            }
            let lambda = x[l.gauge(i)];
            let poff = l.pressure(i).start;
            let mut mean = 0.0;
            for (k, mk) in m.iter().enumerate() {
                r[poff + k] += ht * lambda * mk;
                mean += mk * x[poff + k];
            }
            r[l.gauge(i)] = ht * mean;
            for &(d, g) in &data.dirichlet[i] {
                r[voff + d] = x[voff + d] - g;
            }
        }
        r
    }

    /// Emit Jacobian entries in a fixed order. With `lin = None` only the
    /// positions matter (values are zero).
    ///
    /// Rows and columns of constrained velocity dofs carry only the unit
    /// diagonal: the iterate satisfies the Dirichlet rows exactly, so the
    /// Newton update vanishes there and the dropped couplings never act.
    fn emit(&self, tau: f64, lin: Option<&Linearization>, mut sink: impl FnMut(usize, usize, f64)) {
        let l = self.layout;
        let disc = self.disc;
        let ht = 0.5 * tau;
        let nloc = disc.velocity.local_dim();
        let ncells = disc.mesh.num_cells();
        let jac_blocks: Option<Vec<DMatrix<f64>>> = lin.map(|lin| {
            (0..l.stages * ncells)
                .into_par_iter()
                .map(|k| {
                    let field = &lin.fields[k];
                    let c = disc.local_convection(field);
                    let mut j = disc.local_convection_linearization(field);
                    for a in 0..nloc {
                        for b in 0..nloc {
                            j[(2 * a, 2 * b)] += c[(a, b)];
                            j[(2 * a + 1, 2 * b + 1)] += c[(a, b)];
                        }
                    }
                    j
                })
                .collect()
        });
        let on = lin.is_some();
        for cell in 0..ncells {
            let dofs = disc.velocity.cell_dofs(cell);
            let pd = disc.pressure.cell_dofs(cell);
            let mu = disc.stab.mu(cell);
            for i in 0..l.stages {
                let ro = l.velocity(i).start;
                for j in 0..l.stages {
                    let co = l.velocity(j).start;
                    let aij = self.coeffs.alpha[(i, j)];
                    let conv = jac_blocks.as_ref().map(|b| &b[i * ncells + cell]);
                    for (a, &sa) in dofs.iter().enumerate() {
                        for c in 0..2 {
                            let row = 2 * sa + c;
                            if self.constrained[row] {
                                continue;
                            }
                            for (b, &sb) in dofs.iter().enumerate() {
                                let m = disc.local.mass[(a, b)];
                                if i == j {
                                    let diag = aij * m
                                        + ht * (disc.nu * disc.local.stiffness[(a, b)] + mu * disc.local.lps[(a, b)]);
                                    for d in 0..2 {
                                        let col = 2 * sb + d;
                                        if self.constrained[col] {
                                            continue;
                                        }
                                        let mut v = 0.0;
                                        if on {
                                            v = ht * conv.unwrap()[(2 * a + c, 2 * b + d)];
                                            if c == d {
                                                v += diag;
                                            }
                                        }
                                        sink(ro + row, co + col, v);
                                    }
                                } else if !self.constrained[2 * sb + c] {
                                    sink(ro + row, co + 2 * sb + c, if on { aij * m } else { 0.0 });
                                }
                            }
                        }
                    }
                }
                let po = l.pressure(i).start;
                for (k, gp) in pd.clone().enumerate() {
                    for (a, &sa) in dofs.iter().enumerate() {
                        for c in 0..2 {
                            let row = 2 * sa + c;
                            if self.constrained[row] {
                                continue;
                            }
                            let b = disc.local.div[(k, 2 * a + c)];
                            sink(ro + row, po + gp, if on { -ht * b } else { 0.0 });
                            sink(po + gp, ro + row, if on { ht * b } else { 0.0 });
                        }
                    }
                }
            }
        }
        let m = disc.pressure_mean_weights();
        for i in 0..l.stages {
            let po = l.pressure(i).start;
            let g = l.gauge(i);
            for (k, mk) in m.iter().enumerate() {
                sink(po + k, g, if on { ht * mk } else { 0.0 });
                sink(g, po + k, if on { ht * mk } else { 0.0 });
            }
            let vo = l.velocity(i).start;
            for &d in &self.boundary {
                sink(vo + d, vo + d, if on { 1.0 } else { 0.0 });
            }
        }
    }

    pub fn jacobian(&self, lin: &Linearization, tau: f64) -> Result<SparseMatrix> {
        let mut values = Vec::with_capacity(self.pattern.len());
        self.emit(tau, Some(lin), |_, _, v| values.push(v));
        self.pattern.matrix(&values)
    }

    pub fn factorize(&self, jacobian: &SparseMatrix) -> Result<LuFactorization> {
        self.pattern.factorize(jacobian)
    }

    /// `(div U^i, q)` for every pressure basis function.
    pub fn divergence_moments(&self, velocity: &[f64]) -> Vec<f64> {
        let disc = self.disc;
        let nloc = disc.velocity.local_dim();
        let mut out = vec![0.0; disc.pressure.dim()];
        let mut loc = vec![[0.0; 2]; nloc];
        for cell in 0..disc.mesh.num_cells() {
            disc.velocity.gather(velocity, cell, &mut loc);
            for (k, gp) in disc.pressure.cell_dofs(cell).enumerate() {
                out[gp] = (0..nloc)
                    .map(|a| disc.local.div[(k, 2 * a)] * loc[a][0] + disc.local.div[(k, 2 * a + 1)] * loc[a][1])
                    .sum();
            }
        }
        out
    }
}
