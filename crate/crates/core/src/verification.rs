//! Manufactured solutions, error norms and experimental orders of
//! convergence.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::quadrature::{GaussLegendre, TensorRule};
use crate::slab::{PostProcessed, ProblemData, TrajectoryRecord};
use crate::Point;

/// A smooth exact solution `(u, p)` evaluable in physical coordinates.
pub trait ExactSolution: Sync {
    fn velocity(&self, x: Point, t: f64) -> [f64; 2];
    /// `grad[c][d] = d_d u_c`.
    fn velocity_gradient(&self, x: Point, t: f64) -> [[f64; 2]; 2];
    fn pressure(&self, x: Point, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseKind {
    SpaceDominant,
    TimeDominant,
    RoughPressure,
    SteadyCheck,
}

impl CaseKind {
    pub const ALL: [CaseKind; 4] = [
        CaseKind::SpaceDominant,
        CaseKind::TimeDominant,
        CaseKind::RoughPressure,
        CaseKind::SteadyCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseKind::SpaceDominant => "space_dominant",
            CaseKind::TimeDominant => "time_dominant",
            CaseKind::RoughPressure => "rough_pressure",
            CaseKind::SteadyCheck => "steady_check",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown case '{name}'")))
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed-form solution with forcing `f = u_t - nu Lap u + (u.grad) u + grad p`
/// on the unit square, `T = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub kind: CaseKind,
    pub nu: f64,
}

/// Everything the forcing needs at one point.
struct Pointwise {
    u: [f64; 2],
    grad: [[f64; 2]; 2],
    u_t: [f64; 2],
    lap: [f64; 2],
    grad_p: [f64; 2],
}

// x^2 (1 - x)^2 and its derivatives up to third order
fn profile(x: f64) -> [f64; 4] {
    let x2 = x * x;
    [
        x2 * (1.0 - x) * (1.0 - x),
        2.0 * x - 6.0 * x2 + 4.0 * x2 * x,
        2.0 - 12.0 * x + 12.0 * x2,
        -12.0 + 24.0 * x,
    ]
}

impl ManufacturedCase {
    pub fn new(kind: CaseKind, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid(format!("viscosity must be positive, got {nu}")));
        }
        Ok(Self { kind, nu })
    }

    pub fn space_dominant(nu: f64) -> Result<Self> {
        Self::new(CaseKind::SpaceDominant, nu)
    }

    pub fn time_dominant(nu: f64) -> Result<Self> {
        Self::new(CaseKind::TimeDominant, nu)
    }

    pub fn rough_pressure(nu: f64) -> Result<Self> {
        Self::new(CaseKind::RoughPressure, nu)
    }

    pub fn steady_check(nu: f64) -> Result<Self> {
        Self::new(CaseKind::SteadyCheck, nu)
    }

    pub fn final_time(&self) -> f64 {
        1.0
    }

    /// Whether the boundary data vanish identically.
    pub fn homogeneous_boundary(&self) -> bool {
        matches!(self.kind, CaseKind::TimeDominant | CaseKind::RoughPressure)
    }

    fn pressure_time_factor(&self, t: f64) -> f64 {
        match self.kind {
            CaseKind::RoughPressure => 1.5 + 0.5 * t.powf(4.0 / 3.0),
            _ => 1.5 + 0.5 * (10.0 * PI * t).sin(),
        }
    }

    fn pointwise(&self, x: Point, t: f64) -> Pointwise {
        let [x, y] = x;
        match self.kind {
            CaseKind::SpaceDominant => {
                let (s, c) = t.sin_cos();
                let (sx, cx) = (PI * x).sin_cos();
                let (sy, cy) = (PI * y).sin_cos();
                let shape = [sx * sy, cx * cy];
                Pointwise {
                    u: [s * shape[0], s * shape[1]],
                    grad: [[s * PI * cx * sy, s * PI * sx * cy], [-s * PI * sx * cy, -s * PI * cx * sy]],
                    u_t: [c * shape[0], c * shape[1]],
                    lap: [-2.0 * PI * PI * s * shape[0], -2.0 * PI * PI * s * shape[1]],
                    grad_p: [s * PI * cx, -s * PI * sy],
                }
            }
            CaseKind::TimeDominant | CaseKind::RoughPressure => {
                let (sw, cw) = (10.0 * PI * t).sin_cos();
                let dsw = 10.0 * PI * cw;
                let [px, dpx, ddpx, dddpx] = profile(x);
                let [py, dpy, ddpy, dddpy] = profile(y);
                let shape = [px * dpy, -dpx * py];
                let factor = self.pressure_time_factor(t);
                Pointwise {
                    u: [sw * shape[0], sw * shape[1]],
                    grad: [[sw * dpx * dpy, sw * px * ddpy], [-sw * ddpx * py, -sw * dpx * dpy]],
                    u_t: [dsw * shape[0], dsw * shape[1]],
                    lap: [sw * (ddpx * dpy + px * dddpy), -sw * (dddpx * py + dpx * ddpy)],
                    grad_p: [-3.0 * x * x * factor, -3.0 * y * y * factor],
                }
            }
            CaseKind::SteadyCheck => Pointwise {
                u: [y, x],
                grad: [[0.0, 1.0], [1.0, 0.0]],
                u_t: [0.0, 0.0],
                lap: [0.0, 0.0],
                grad_p: [0.0, 0.0],
            },
        }
    }

    pub fn velocity_divergence(&self, x: Point, t: f64) -> f64 {
        let g = self.pointwise(x, t).grad;
        g[0][0] + g[1][1]
    }
}

impl ExactSolution for ManufacturedCase {
    fn velocity(&self, x: Point, t: f64) -> [f64; 2] {
        self.pointwise(x, t).u
    }

    fn velocity_gradient(&self, x: Point, t: f64) -> [[f64; 2]; 2] {
        self.pointwise(x, t).grad
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        let [x, y] = x;
        match self.kind {
            CaseKind::SpaceDominant => t.sin() * ((PI * x).sin() + (PI * y).cos() - 2.0 / PI),
            CaseKind::TimeDominant | CaseKind::RoughPressure => {
                -(x * x * x + y * y * y - 0.5) * self.pressure_time_factor(t)
            }
            CaseKind::SteadyCheck => 0.0,
        }
    }
}

impl ProblemData for ManufacturedCase {
    fn forcing(&self, x: Point, t: f64) -> [f64; 2] {
        let p = self.pointwise(x, t);
        let mut f = [0.0; 2];
        for c in 0..2 {
            let adv = p.u[0] * p.grad[c][0] + p.u[1] * p.grad[c][1];
            f[c] = p.u_t[c] - self.nu * p.lap[c] + adv + p.grad_p[c];
        }
        f
    }

    fn boundary(&self, x: Point, t: f64) -> [f64; 2] {
        self.velocity(x, t)
    }

    fn initial(&self, x: Point) -> [f64; 2] {
        self.velocity(x, 0.0)
    }
}

/// Squared error contributions of one slab.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlabErrors {
    /// `Q_n[||e||^2]`
    pub l2: f64,
    /// `Q_n[nu ||grad e||^2]`
    pub viscous: f64,
    /// `Q_n[S_h(e, e)]`
    pub stabilization: f64,
    /// `||[e]_{n-1}||^2`
    pub jump: f64,
    /// `int_{I_n} ||e||^2 dt`
    pub l2l2: f64,
    /// `int_{I_n} ||e_p||^2 dt` after removing the mean of both pressures
    pub pressure: f64,
    /// `int_{I_n} ||u - u^I||^2 dt` for the post-processed velocity
    pub postprocessed: Option<f64>,
}

/// Error norms of one discrete trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub slabs: Vec<SlabErrors>,
    /// `||e(T^-)||^2`
    pub final_sq: f64,
    /// `||e(T^-)||^2` recomputed with a rule twice as fine per direction.
    pub final_sq_fine: f64,
}

impl ErrorReport {
    fn sum(&self, f: impl Fn(&SlabErrors) -> f64) -> f64 {
        self.slabs.iter().map(f).sum()
    }

    /// `||u - u_h||_{L2(L2)}`, integrated in time with Gauss points.
    pub fn l2l2_velocity(&self) -> f64 {
        self.sum(|s| s.l2l2).sqrt()
    }

    pub fn l2l2_pressure(&self) -> f64 {
        self.sum(|s| s.pressure).sqrt()
    }

    pub fn l2l2_postprocessed(&self) -> Option<f64> {
        self.slabs
            .iter()
            .map(|s| s.postprocessed)
            .sum::<Option<f64>>()
            .map(f64::sqrt)
    }

    pub fn final_error(&self) -> f64 {
        self.final_sq.sqrt()
    }

    /// `(sum_n ||[e]_{n-1}||^2)^{1/2}`
    pub fn jump_norm(&self) -> f64 {
        self.sum(|s| s.jump).sqrt()
    }

    /// `||e||_S^2 = ||e(T^-)||^2 + sum_n ||[e]_{n-1}||^2
    ///            + sum_n Q_n[nu ||grad e||^2 + S_h(e, e) + ||e||^2]`
    pub fn s_norm(&self) -> f64 {
        (self.final_sq + self.sum(|s| s.jump + s.viscous + s.stabilization + s.l2)).sqrt()
    }

    /// `Q_n`-weighted `L2(L2)` velocity error.
    pub fn quadrature_l2l2_velocity(&self) -> f64 {
        self.sum(|s| s.l2).sqrt()
    }
}

struct CellSums {
    l2: f64,
    viscous: f64,
    stabilization: f64,
}

fn velocity_errors(
    disc: &Discretization,
    exact: &dyn ExactSolution,
    coeffs: &[f64],
    t: f64,
    with_gradients: bool,
) -> CellSums {
    let w = disc.weights();
    let projector = disc.projector();
    let parts: Vec<CellSums> = (0..disc.mesh().num_cells())
        .into_par_iter()
        .map(|cell| {
            let field = disc.cell_field(coeffs, cell);
            let mut sums = CellSums {
                l2: 0.0,
                viscous: 0.0,
                stabilization: 0.0,
            };
            let pts = disc.quadrature_points(cell);
            let mut grad_err = vec![[[0.0; 2]; 2]; pts.len()];
            for (q, &x) in pts.iter().enumerate() {
                let u = exact.velocity(x, t);
                let e = [u[0] - field.values[q][0], u[1] - field.values[q][1]];
                sums.l2 += w[q] * (e[0] * e[0] + e[1] * e[1]);
                if with_gradients {
                    let g = exact.velocity_gradient(x, t);
                    for c in 0..2 {
                        for d in 0..2 {
                            grad_err[q][c][d] = g[c][d] - field.grads[q][c][d];
                            sums.viscous += disc.nu() * w[q] * grad_err[q][c][d].powi(2);
                        }
                    }
                }
            }
            let mu = disc.stab().mu(cell);
            if with_gradients && mu > 0.0 {
                for c in 0..2 {
                    for d in 0..2 {
                        let g: Vec<f64> = grad_err.iter().map(|g| g[c][d]).collect();
                        sums.stabilization += mu * projector.fluctuation_norm_sq(&g);
                    }
                }
            }
            sums
        })
        .collect();
    let mut total = CellSums {
        l2: 0.0,
        viscous: 0.0,
        stabilization: 0.0,
    };
    for p in parts {
        total.l2 += p.l2;
        total.viscous += p.viscous;
        total.stabilization += p.stabilization;
    }
    total
}

fn pressure_error(disc: &Discretization, exact: &dyn ExactSolution, coeffs: &[f64], t: f64) -> f64 {
    let w = disc.weights();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..disc.mesh().num_cells())
        .into_par_iter()
        .map(|cell| {
            let ph = disc.cell_pressure(coeffs, cell);
            let pe: Vec<f64> = disc.quadrature_points(cell).iter().map(|&x| exact.pressure(x, t)).collect();
            (pe, ph)
        })
        .collect();
    let (mut mean_e, mut mean_h) = (0.0, 0.0);
    for (pe, ph) in &samples {
        for q in 0..w.len() {
            mean_e += w[q] * pe[q];
            mean_h += w[q] * ph[q];
        }
    }
    let mut err = 0.0;
    for (pe, ph) in &samples {
        for q in 0..w.len() {
            err += w[q] * ((pe[q] - mean_e) - (ph[q] - mean_h)).powi(2);
        }
    }
    err
}

/// `||u(t) - u_h||^2` with a Gauss rule of `2 (r + 2)` points per direction.
fn fine_l2_error(disc: &Discretization, exact: &dyn ExactSolution, coeffs: &[f64], t: f64) -> f64 {
    let rule = TensorRule::gauss(2 * disc.rule().points_per_direction());
    let tab = disc.velocity().element().tabulate(&rule);
    let mesh = disc.mesh();
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let map = mesh.cell_map(cell);
            let dofs = disc.velocity().cell_dofs(cell);
            let mut sum = 0.0;
            for (q, (&p, &w)) in rule.points().iter().zip(rule.weights()).enumerate() {
                let psi = tab.values(q);
                let mut uh = [0.0; 2];
                for (a, &s) in dofs.iter().enumerate() {
                    uh[0] += psi[a] * coeffs[2 * s];
                    uh[1] += psi[a] * coeffs[2 * s + 1];
                }
                let u = exact.velocity(map.apply(p), t);
                sum += w * map.det_jacobian() * ((u[0] - uh[0]).powi(2) + (u[1] - uh[1]).powi(2));
            }
            sum
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Error norms of a trajectory against an exact solution.
///
/// `Q_n`-weighted terms use the slab's Radau rule, so they only see stage
/// values. The `L2(L2)` velocity and pressure errors integrate in time with
/// a `(k + 3)`-point Gauss rule, which resolves the error between stages.
pub fn compute_errors(
    disc: &Discretization,
    trajectory: &TrajectoryRecord,
    exact: &dyn ExactSolution,
    post: Option<&PostProcessed<'_>>,
) -> ErrorReport {
    let k = trajectory.rule.degree();
    let gauss = GaussLegendre::new(k + 3);
    let mass = disc.assemble_mass();
    let radau_w = trajectory.rule.weights();
    let mut slabs = Vec::with_capacity(trajectory.slabs.len());
    for (idx, slab) in trajectory.slabs.iter().enumerate() {
        let n = idx + 1;
        let half = 0.5 * slab.tau;
        let mut e = SlabErrors::default();
        for (i, u) in slab.velocity.iter().enumerate() {
            let sums = velocity_errors(disc, exact, u, slab.times[i], true);
            let w = half * radau_w[i];
            e.l2 += w * sums.l2;
            e.viscous += w * sums.viscous;
            e.stabilization += w * sums.stabilization;
        }
        let jump = trajectory.jump(n);
        e.jump = mass.bilinear(&jump, &jump).max(0.0);
        let mut post_sum = post.map(|_| 0.0);
        for (&s, &w) in gauss.points().iter().zip(gauss.weights()) {
            let t = slab.t_prev + half * (s + 1.0);
            let u = trajectory.velocity_at(n, s);
            e.l2l2 += half * w * velocity_errors(disc, exact, &u, t, false).l2;
            let p = trajectory.pressure_at(n, s);
            e.pressure += half * w * pressure_error(disc, exact, &p, t);
            if let (Some(pp), Some(acc)) = (post, post_sum.as_mut()) {
                let u = pp.velocity_at(n, s);
                *acc += half * w * velocity_errors(disc, exact, &u, t, false).l2;
            }
        }
        e.postprocessed = post_sum;
        slabs.push(e);
    }
    let t_end = trajectory.partition.final_time();
    let u_end = trajectory.final_velocity();
    ErrorReport {
        slabs,
        final_sq: velocity_errors(disc, exact, u_end, t_end, false).l2,
        final_sq_fine: fine_l2_error(disc, exact, u_end, t_end),
    }
}

/// Orders `log(e_i / e_{i+1}) / log(p_i / p_{i+1})`; `None` where undefined.
pub fn eoc(errors: &[f64], params: &[f64]) -> Result<Vec<Option<f64>>> {
    if errors.len() != params.len() || errors.len() < 2 {
        return Err(Error::invalid("eoc needs two equally long lists with at least two entries"));
    }
    if params.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::invalid("refinement parameters must be positive"));
    }
    Ok(errors
        .windows(2)
        .zip(params.windows(2))
        .map(|(e, p)| {
            if e[0] > 0.0 && e[1] > 0.0 && p[0] != p[1] {
                Some((e[0] / e[1]).ln() / (p[0] / p[1]).ln())
            } else {
                None
            }
        })
        .collect())
}

/// Order between the last row and the row `span` refinements before it.
pub fn span_eoc(errors: &[f64], params: &[f64], span: usize) -> Option<f64> {
    let n = errors.len();
    if span == 0 || n <= span || params.len() != n {
        return None;
    }
    let (e0, e1, p0, p1) = (errors[n - 1 - span], errors[n - 1], params[n - 1 - span], params[n - 1]);
    (e0 > 0.0 && e1 > 0.0 && p0 > 0.0 && p1 > 0.0 && p0 != p1).then(|| (e0 / e1).ln() / (p0 / p1).ln())
}

/// Named error columns over a refinement sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EocTable {
    pub param_name: String,
    pub params: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl EocTable {
    pub fn new(param_name: impl Into<String>, params: Vec<f64>) -> Self {
        Self {
            param_name: param_name.into(),
            params,
            columns: Vec::new(),
        }
    }

    pub fn push_column(&mut self, name: impl Into<String>, errors: Vec<f64>) -> Result<()> {
        if errors.len() != self.params.len() {
            return Err(Error::invalid("column length differs from the refinement sequence"));
        }
        self.columns.push((name.into(), errors));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn orders(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let col = self.column(name)?;
        if col.len() < 2 {
            return Some(Vec::new());
        }
        eoc(col, &self.params).ok()
    }

    pub fn span_order(&self, name: &str, span: usize) -> Option<f64> {
        span_eoc(self.column(name)?, &self.params, span)
    }
}

impl fmt::Display for EocTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>12}", self.param_name)?;
        for (name, _) in &self.columns {
            write!(f, " {:>22} {:>6}", name, "eoc")?;
        }
        writeln!(f)?;
        let orders: Vec<Vec<Option<f64>>> = self
            .columns
            .iter()
            .map(|(n, _)| self.orders(n).unwrap_or_default())
            .collect();
        for (row, p) in self.params.iter().enumerate() {
            write!(f, "{p:>12.5e}")?;
            for (c, (_, values)) in self.columns.iter().enumerate() {
                let order = row
                    .checked_sub(1)
                    .and_then(|r| orders[c].get(r).copied().flatten())
                    .map_or_else(|| "-".to_string(), |o| format!("{o:.2}"));
                write!(f, " {:>22.6e} {:>6}", values[row], order)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
