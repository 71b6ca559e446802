//! Slab-by-slab dG(k) time stepping with Newton on the coupled stage system.

use std::cell::RefCell;
use std::io::Write;

use crate::assembly::{Discretization, StageData, StageSystem};
use crate::error::{Error, Result};
use crate::sparse::LuFactorization;
use crate::spaces::VelocitySpace;
use crate::temporal::{gauss_radau, map_to_slab, slab_coefficients, LagrangeBasis, RadauRule, TimePartition};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Tolerance relative to the residual of the initial guess.
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    /// Keep the last factored Jacobian across iterations and slabs and
    /// refactor only when the residual contraction drops below
    /// `refresh_ratio`. Off by default, which is plain Newton.
    pub lagged_jacobian: bool,
    pub refresh_ratio: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_iter: 20,
            lagged_jacobian: false,
            refresh_ratio: 0.1,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("Newton tolerances must be positive and max_iter >= 1"));
        }
        if !(self.refresh_ratio > 0.0 && self.refresh_ratio < 1.0) {
            return Err(Error::invalid("refresh_ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Data of an initial-boundary value problem.
pub trait ProblemData: Sync {
    fn forcing(&self, x: Point, t: f64) -> [f64; 2];
    fn boundary(&self, x: Point, t: f64) -> [f64; 2];
    fn initial(&self, x: Point) -> [f64; 2];
}

/// Coefficients of the discrete initial velocity.
pub fn initial_velocity(u0: impl Fn(Point) -> [f64; 2], space: &VelocitySpace) -> Vec<f64> {
    space.interpolate(u0)
}

/// Stage values of one slab `(t_prev, t_prev + tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabState {
    pub index: usize,
    pub t_prev: f64,
    pub tau: f64,
    pub times: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    /// Gauge multipliers, one per stage.
    pub multipliers: Vec<f64>,
    /// Euclidean residual norms of every Newton iterate.
    pub newton_residuals: Vec<f64>,
}

impl SlabState {
    /// `u(t_n^-)`, the last stage.
    pub fn left_limit(&self) -> &[f64] {
        self.velocity.last().expect("at least one stage")
    }

    fn combine(stages: &[Vec<f64>], coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; stages[0].len()];
        for (s, &c) in stages.iter().zip(coef) {
            for (o, v) in out.iter_mut().zip(s) {
                *o += c * v;
            }
        }
        out
    }
}

/// All slabs of a run plus the discrete initial value.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub initial: Vec<f64>,
    pub partition: TimePartition,
    pub rule: RadauRule,
    pub slabs: Vec<SlabState>,
}

impl TrajectoryRecord {
    fn basis(&self) -> LagrangeBasis {
        self.rule.lagrange()
    }

    /// `u(t_n^-)` for `n = 0..=N`; `n = 0` is the initial value.
    pub fn left_limit(&self, n: usize) -> &[f64] {
        if n == 0 {
            &self.initial
        } else {
            self.slabs[n - 1].left_limit()
        }
    }

    /// Velocity on slab `n` (1-based) at reference time `s in [-1, 1]`.
    pub fn velocity_at(&self, n: usize, s: f64) -> Vec<f64> {
        SlabState::combine(&self.slabs[n - 1].velocity, &self.basis().eval(s))
    }

    pub fn pressure_at(&self, n: usize, s: f64) -> Vec<f64> {
        SlabState::combine(&self.slabs[n - 1].pressure, &self.basis().eval(s))
    }

    /// `[u]_{n-1} = u(t_{n-1}^+) - u(t_{n-1}^-)` for slab `n`.
    pub fn jump(&self, n: usize) -> Vec<f64> {
        let right = self.velocity_at(n, -1.0);
        right.iter().zip(self.left_limit(n - 1)).map(|(a, b)| a - b).collect()
    }

    pub fn final_velocity(&self) -> &[f64] {
        self.left_limit(self.slabs.len())
    }

    /// One CSV record per stage: slab, stage, time and a coefficient
    /// checksum (sum of velocity and pressure coefficients).
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "n,i,t,checksum")?;
        for s in &self.slabs {
            for i in 0..s.times.len() {
                let sum: f64 = s.velocity[i].iter().chain(&s.pressure[i]).sum();
                writeln!(out, "{},{},{:.17e},{:.17e}", s.index, i + 1, s.times[i], sum)?;
            }
        }
        Ok(())
    }
}

/// Time-continuous reconstruction of degree `k + 1` per slab interpolating
/// the left limit at `t_{n-1}` and the stage values.
#[derive(Debug, Clone)]
pub struct PostProcessed<'a> {
    trajectory: &'a TrajectoryRecord,
    basis: LagrangeBasis,
}

pub fn postprocess(trajectory: &TrajectoryRecord) -> PostProcessed<'_> {
    let mut nodes = vec![-1.0];
    nodes.extend_from_slice(trajectory.rule.points());
    PostProcessed {
        trajectory,
        basis: LagrangeBasis::new(&nodes),
    }
}

impl PostProcessed<'_> {
    pub fn velocity_at(&self, n: usize, s: f64) -> Vec<f64> {
        let phi = self.basis.eval(s);
        let mut out: Vec<f64> = self.trajectory.left_limit(n - 1).iter().map(|v| phi[0] * v).collect();
        for (stage, &c) in self.trajectory.slabs[n - 1].velocity.iter().zip(&phi[1..]) {
            for (o, v) in out.iter_mut().zip(stage) {
                *o += c * v;
            }
        }
        out
    }
}

/// Newton solver for the stage system of one discretization and degree.
pub struct SlabSolver<'d> {
    disc: &'d Discretization,
    rule: RadauRule,
    system: StageSystem<'d>,
    config: NewtonConfig,
    /// Factored Jacobian kept for lagged Newton, keyed by the step size.
    cached: RefCell<Option<(f64, LuFactorization)>>,
}

impl<'d> SlabSolver<'d> {
    pub fn new(disc: &'d Discretization, k: usize, config: NewtonConfig) -> Result<Self> {
        config.validate()?;
        let rule = gauss_radau(k)?;
        let system = StageSystem::new(disc, slab_coefficients(&rule))?;
        Ok(Self {
            disc,
            rule,
            system,
            config,
            cached: RefCell::new(None),
        })
    }

    pub fn rule(&self) -> &RadauRule {
        &self.rule
    }

    pub fn system(&self) -> &StageSystem<'d> {
        &self.system
    }

    fn stage_data(&self, times: &[f64], problem: &dyn ProblemData) -> StageData {
        let velocity = self.disc.velocity();
        StageData {
            loads: times
                .iter()
                .map(|&t| self.disc.assemble_load(|x, t| problem.forcing(x, t), t))
                .collect(),
            dirichlet: times
                .iter()
                .map(|&t| velocity.dirichlet_values(|x, t| problem.boundary(x, t), t))
                .collect(),
        }
    }

    /// Solve slab `n` on `(t_prev, t_prev + tau]` from the left value `u0`.
    pub fn solve_slab(
        &self,
        n: usize,
        u0: &[f64],
        t_prev: f64,
        tau: f64,
        problem: &dyn ProblemData,
    ) -> Result<SlabState> {
        if u0.len() != self.disc.velocity().dim() {
            return Err(Error::invalid("initial coefficient vector has the wrong length"));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial coefficients must be finite"));
        }
        let times = map_to_slab(&self.rule, t_prev, tau)?.points;
        let data = self.stage_data(&times, problem);
        let layout = self.system.layout();
        let mut x = vec![0.0; layout.len()];
        for i in 0..layout.stages {
            x[layout.velocity(i)].copy_from_slice(u0);
        }
        self.system.apply_dirichlet(&mut x, &data);

        let mut history = Vec::new();
        let mut tol = self.config.atol;
        let mut cached = self.cached.borrow_mut();
        if cached.as_ref().is_some_and(|(t, _)| (t - tau).abs() > 1e-8 * tau) {
            *cached = None;
        }
        let mut stale_step = false;
        loop {
            let lin = self.system.linearize(&x);
            let r = self.system.residual(&lin, &x, u0, tau, &data);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                *cached = None;
                return Err(Error::StepFailure {
                    slab: n,
                    iterations: history.len(),
                    residual: norm,
                });
            }
            if history.is_empty() {
                tol = (self.config.rtol * norm).max(self.config.atol);
            }
            let refresh = !self.config.lagged_jacobian
                || cached.is_none()
                || (stale_step && history.last().is_some_and(|&prev| norm > self.config.refresh_ratio * prev));
            history.push(norm);
            if norm <= tol {
                break;
            }
            if history.len() > self.config.max_iter {
                *cached = None;
                return Err(Error::StepFailure {
                    slab: n,
                    iterations: self.config.max_iter,
                    residual: norm,
                });
            }
            if refresh {
                let jac = self.system.jacobian(&lin, tau)?;
                *cached = Some((tau, self.system.factorize(&jac)?));
            }
            stale_step = !refresh;
            let lu = &cached.as_ref().expect("factorization present").1;
            let dx = lu.solve(&r)?;
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a -= d);
            if !self.config.lagged_jacobian {
                *cached = None;
            }
        }

        Ok(SlabState {
            index: n,
            t_prev,
            tau,
            velocity: (0..layout.stages).map(|i| x[layout.velocity(i)].to_vec()).collect(),
            pressure: (0..layout.stages).map(|i| x[layout.pressure(i)].to_vec()).collect(),
            multipliers: (0..layout.stages).map(|i| x[layout.gauge(i)]).collect(),
            times,
            newton_residuals: history,
        })
    }

    /// Run over a whole partition; the first failing slab aborts the run.
    pub fn advance(&self, partition: &TimePartition, problem: &dyn ProblemData) -> Result<TrajectoryRecord> {
        let initial = initial_velocity(|x| problem.initial(x), self.disc.velocity());
        let mut slabs: Vec<SlabState> = Vec::with_capacity(partition.num_slabs());
        for n in 1..=partition.num_slabs() {
            let (t_prev, tau) = partition.slab(n);
            let u0 = slabs.last().map_or(initial.as_slice(), |s| s.left_limit());
            let state = self.solve_slab(n, u0, t_prev, tau, problem)?;
            slabs.push(state);
        }
        Ok(TrajectoryRecord {
            initial,
            partition: partition.clone(),
            rule: self.rule.clone(),
            slabs,
        })
    }
}
