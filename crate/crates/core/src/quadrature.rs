//! Gauss-Legendre rules on `[-1, 1]` and their tensor products on the
//! reference square.

use std::f64::consts::PI;

use crate::Point;

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term
/// recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for m in 1..n {
        let m = m as f64;
        let next = ((2.0 * m + 1.0) * x * p - m * p_prev) / (m + 1.0);
        p_prev = p;
        p = next;
    }
    let n_f = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^{n+1} n(n+1)/2
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * n_f * (n_f + 1.0) / 2.0
    } else {
        n_f * (p_prev - x * p) / (1.0 - x * x)
    };
    (p, dp)
}

/// Gauss-Legendre rule with `n` points on `[-1, 1]`, exact for degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Chebyshev-like initial guess, ascending order.
            let mut x = -(PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            points[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        Self { points, weights }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// Tensor-product Gauss rule on the reference square `[-1, 1]^2`.
///
/// Points are ordered with the first coordinate running fastest.
#[derive(Debug, Clone)]
pub struct TensorRule {
    points: Vec<Point>,
    weights: Vec<f64>,
    points_per_direction: usize,
}

impl TensorRule {
    pub fn gauss(points_per_direction: usize) -> Self {
        let line = GaussLegendre::new(points_per_direction);
        let mut points = Vec::with_capacity(points_per_direction.pow(2));
        let mut weights = Vec::with_capacity(points_per_direction.pow(2));
        for (&y, &wy) in line.points().iter().zip(line.weights()) {
            for (&x, &wx) in line.points().iter().zip(line.weights()) {
                points.push([x, y]);
                weights.push(wx * wy);
            }
        }
        Self {
            points,
            weights,
            points_per_direction,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_per_direction(&self) -> usize {
        self.points_per_direction
    }
}
