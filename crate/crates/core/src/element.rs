//! Reference elements on `(-1, 1)^2`.
//!
//! * `Qr`: tensor-product Lagrange polynomials on equispaced nodes.
//! * `QrBubble`: `Qr` plus the two cell bubbles
//!   `(1 - x^2)(1 - y^2) x^{r-1}` and `(1 - x^2)(1 - y^2) y^{r-1}`.
//! * `PrDisc`: full polynomials of total degree `r - 1`, spanned by products
//!   of Legendre polynomials (orthogonal on the reference square).

use crate::error::{Error, Result};
use crate::quadrature::{legendre, TensorRule};
use crate::temporal::LagrangeBasis;
use crate::Point;

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementFamily {
    Qr,
    QrBubble,
    PrDisc,
}

#[derive(Debug, Clone)]
pub struct ReferenceElement {
    family: ElementFamily,
    order: usize,
    line: Option<LagrangeBasis>,
    nodes: Vec<Point>,
    /// `(a, b)` exponents of the Legendre products for `PrDisc`.
    modes: Vec<(usize, usize)>,
}

impl ReferenceElement {
    pub fn new(family: ElementFamily, order: usize) -> Result<Self> {
        let min = match family {
            ElementFamily::Qr => 1,
            ElementFamily::QrBubble | ElementFamily::PrDisc => 2,
        };
        if order < min || order > MAX_ORDER {
            return Err(Error::invalid(format!(
                "{family:?} of order {order} is not supported (need {min}..={MAX_ORDER})"
            )));
        }
        let mut element = Self {
            family,
            order,
            line: None,
            nodes: Vec::new(),
            modes: Vec::new(),
        };
        match family {
            ElementFamily::Qr | ElementFamily::QrBubble => {
                let pts: Vec<f64> = (0..=order)
                    .map(|i| -1.0 + 2.0 * i as f64 / order as f64)
                    .collect();
                for &y in &pts {
                    for &x in &pts {
                        element.nodes.push([x, y]);
                    }
                }
                element.line = Some(LagrangeBasis::new(&pts));
            }
            ElementFamily::PrDisc => {
                for degree in 0..order {
                    for j in 0..=degree {
                        element.modes.push((degree - j, j));
                    }
                }
            }
        }
        Ok(element)
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn local_dim(&self) -> usize {
        let r = self.order;
        match self.family {
            ElementFamily::Qr => (r + 1) * (r + 1),
            ElementFamily::QrBubble => (r + 1) * (r + 1) + 2,
            ElementFamily::PrDisc => r * (r + 1) / 2,
        }
    }

    /// Number of nodal (Lagrange) functions; bubbles come after them.
    pub fn num_nodal(&self) -> usize {
        self.nodes.len()
    }

    /// Defining nodes of the nodal functions (empty for `PrDisc`).
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Values and reference gradients of every shape function at `xhat`.
    pub fn evaluate(&self, xhat: Point) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.local_dim();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        self.evaluate_into(xhat, &mut values, &mut grads);
        (values, grads)
    }

    pub fn evaluate_into(&self, xhat: Point, values: &mut [f64], grads: &mut [[f64; 2]]) {
        let [x, y] = xhat;
        match self.family {
            ElementFamily::Qr | ElementFamily::QrBubble => {
                let line = self.line.as_ref().expect("nodal element has a line basis");
                let (lx, ly) = (line.eval(x), line.eval(y));
                let (dx, dy) = (line.eval_derivative(x), line.eval_derivative(y));
                let m = line.len();
                for b in 0..m {
                    for a in 0..m {
                        let i = b * m + a;
                        values[i] = lx[a] * ly[b];
                        grads[i] = [dx[a] * ly[b], lx[a] * dy[b]];
                    }
                }
                if self.family == ElementFamily::QrBubble {
                    let e = (self.order - 1) as i32;
                    let (bx, by) = (1.0 - x * x, 1.0 - y * y);
                    let base = bx * by;
                    let dbase = [-2.0 * x * by, -2.0 * y * bx];
                    let px = x.powi(e);
                    let py = y.powi(e);
                    let dpx = if e == 0 { 0.0 } else { e as f64 * x.powi(e - 1) };
                    let dpy = if e == 0 { 0.0 } else { e as f64 * y.powi(e - 1) };
                    let i = m * m;
                    values[i] = base * px;
                    grads[i] = [dbase[0] * px + base * dpx, dbase[1] * px];
                    values[i + 1] = base * py;
                    grads[i + 1] = [dbase[0] * py, dbase[1] * py + base * dpy];
                }
            }
            ElementFamily::PrDisc => {
                let lx: Vec<(f64, f64)> = (0..self.order).map(|a| legendre(a, x)).collect();
                let ly: Vec<(f64, f64)> = (0..self.order).map(|b| legendre(b, y)).collect();
                for (i, &(a, b)) in self.modes.iter().enumerate() {
                    values[i] = lx[a].0 * ly[b].0;
                    grads[i] = [lx[a].1 * ly[b].0, lx[a].0 * ly[b].1];
                }
            }
        }
    }

    pub fn tabulate(&self, rule: &TensorRule) -> Tabulation {
        let n = self.local_dim();
        let nq = rule.len();
        let mut values = vec![0.0; nq * n];
        let mut grads = vec![[0.0; 2]; nq * n];
        for (q, &p) in rule.points().iter().enumerate() {
            self.evaluate_into(p, &mut values[q * n..(q + 1) * n], &mut grads[q * n..(q + 1) * n]);
        }
        Tabulation {
            num_points: nq,
            num_functions: n,
            values,
            grads,
        }
    }
}

/// Shape function values and reference gradients at quadrature points,
/// point-major.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub num_points: usize,
    pub num_functions: usize,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

impl Tabulation {
    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q * self.num_functions..(q + 1) * self.num_functions]
    }

    pub fn grads(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.num_functions..(q + 1) * self.num_functions]
    }
}
