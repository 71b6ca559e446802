//! Right-sided Gauss-Radau rules, the temporal Lagrange basis and the dG(k)
//! stage coefficients.
//!
//! A dG(k) slab solution is written as `u(t) = sum_j U^j phi_j(t)`, with
//! `phi_j` the Lagrange polynomials at the Radau points. Testing with
//! `phi_i / w_i` and integrating with the Radau rule gives the stage system
//!
//! ```text
//! sum_j alpha_ij (U^j, v) + tau/2 [A_h(U^i, v) + n(U^i, U^i, v)]
//!     = beta_i (U^0, v) + tau/2 <f(t_i), v>
//! ```
//!
//! with `alpha_ij = phi_j'(t_i) + beta_i phi_j(-1)` and
//! `beta_i = phi_i(-1) / w_i`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quadrature::legendre;

/// Largest supported temporal degree.
pub const MAX_DEGREE: usize = 5;

/// Lagrange basis on a set of distinct nodes.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let bary = nodes
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let prod: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, &xm)| xj - xm)
                    .product();
                1.0 / prod
            })
            .collect();
        Self {
            nodes: nodes.to_vec(),
            bary,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of all basis polynomials at `x` (barycentric form).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        if let Some(j) = self.nodes.iter().position(|&xj| x == xj) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &xj), &wj) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            *o = wj / (x - xj);
            denom += *o;
        }
        out.iter_mut().for_each(|v| *v /= denom);
    }

    /// Derivatives of all basis polynomials at an arbitrary `x`.
    pub fn eval_derivative(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            let mut sum = 0.0;
            for m in (0..n).filter(|&m| m != j) {
                let mut term = 1.0 / (self.nodes[j] - self.nodes[m]);
                for l in (0..n).filter(|&l| l != j && l != m) {
                    term *= (x - self.nodes[l]) / (self.nodes[j] - self.nodes[l]);
                }
                sum += term;
            }
            *o = sum;
        }
        out
    }

    /// `D[(i, j)] = phi_j'(x_i)` by the barycentric differentiation formula.
    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let v = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                d[(i, j)] = v;
                diag -= v;
            }
            d[(i, i)] = diag;
        }
        d
    }
}

/// Right-sided Gauss-Radau rule on `[-1, 1]` with `k + 1` points, the last
/// one at `1`. Exact for polynomials of degree `2k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadauRule {
    k: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl RadauRule {
    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn lagrange(&self) -> LagrangeBasis {
        LagrangeBasis::new(&self.points)
    }
}

/// Builds the `(k+1)`-point right-sided Radau rule.
///
/// Interior points are the zeros of the Jacobi polynomial `P_k^{(1,0)}`,
/// found as eigenvalues of its Jacobi matrix and polished by Newton on
/// `P_{k+1} - P_k`.
pub fn gauss_radau(k: usize) -> Result<RadauRule> {
    if k > MAX_DEGREE {
        return Err(Error::invalid(format!(
            "Gauss-Radau degree k={k} outside supported range 0..={MAX_DEGREE}"
        )));
    }
    let n = k + 1;
    let mut points = Vec::with_capacity(n);
    if k > 0 {
        // Monic recurrence for weight (1 - x): a_j = -1/((2j+1)(2j+3)),
        // b_j = j(j+1)/(2j+1)^2.
        let mut jac = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            let jf = j as f64;
            jac[(j, j)] = -1.0 / ((2.0 * jf + 1.0) * (2.0 * jf + 3.0));
            if j + 1 < k {
                let m = jf + 1.0;
                let b = (m * (m + 1.0)).sqrt() / (2.0 * m + 1.0);
                jac[(j, j + 1)] = b;
                jac[(j + 1, j)] = b;
            }
        }
        let mut roots: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
        roots.sort_by(|a, b| a.total_cmp(b));
        for x in roots.iter_mut() {
            for _ in 0..20 {
                let (pn, dpn) = legendre(n, *x);
                let (pk, dpk) = legendre(k, *x);
                let step = (pn - pk) / (dpn - dpk);
                *x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
        }
        points.extend(roots);
    }
    points.push(1.0);

    let nf = n as f64;
    let weights = points
        .iter()
        .map(|&x| {
            if x == 1.0 {
                2.0 / (nf * nf)
            } else {
                let (pk, _) = legendre(k, x);
                (1.0 + x) / (nf * nf * pk * pk)
            }
        })
        .collect();
    Ok(RadauRule { k, points, weights })
}

/// Stage matrix `alpha` and initial-value weights `beta` of the dG(k)
/// slab system.
#[derive(Debug, Clone)]
pub struct SlabCoefficients {
    pub alpha: DMatrix<f64>,
    pub beta: Vec<f64>,
}

impl SlabCoefficients {
    pub fn stages(&self) -> usize {
        self.beta.len()
    }
}

pub fn slab_coefficients(rule: &RadauRule) -> SlabCoefficients {
    let basis = rule.lagrange();
    let at_left = basis.eval(-1.0);
    let deriv = basis.derivative_matrix();
    let n = rule.num_points();
    let beta: Vec<f64> = (0..n).map(|i| at_left[i] / rule.weights[i]).collect();
    let alpha = DMatrix::from_fn(n, n, |i, j| deriv[(i, j)] + beta[i] * at_left[j]);
    SlabCoefficients { alpha, beta }
}

/// Radau points and weights transported to a slab `(t_prev, t_prev + tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabQuadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn map_to_slab(rule: &RadauRule, t_prev: f64, tau: f64) -> Result<SlabQuadrature> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("slab length must be positive, got {tau}")));
    }
    let half = 0.5 * tau;
    let mut points: Vec<f64> = rule.points.iter().map(|&s| t_prev + half * (s + 1.0)).collect();
    // right endpoint exactly
    *points.last_mut().expect("rule has at least one point") = t_prev + tau;
    let weights = rule.weights.iter().map(|&w| half * w).collect();
    Ok(SlabQuadrature { points, weights })
}

/// Partition `0 = t_0 < t_1 < ... < t_N = T` of the time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    nodes: Vec<f64>,
}

impl TimePartition {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("time partition needs at least one slab"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid("time partition must start at t = 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("time partition nodes must increase strictly"));
        }
        Ok(Self { nodes })
    }

    /// `N` slabs of equal length over `[0, final_time]`.
    pub fn uniform(final_time: f64, slabs: usize) -> Result<Self> {
        if slabs == 0 || !(final_time > 0.0) {
            return Err(Error::invalid("uniform partition needs T > 0 and N >= 1"));
        }
        let nodes = (0..=slabs)
            .map(|n| final_time * n as f64 / slabs as f64)
            .collect();
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_slabs(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Start time and length of slab `n` (1-based, as `I_n = (t_{n-1}, t_n]`).
    pub fn slab(&self, n: usize) -> (f64, f64) {
        (self.nodes[n - 1], self.nodes[n] - self.nodes[n - 1])
    }

    pub fn final_time(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn max_step(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn min_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}
