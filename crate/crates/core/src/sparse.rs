//! Compressed sparse column matrices and the direct solver.
//!
//! Storage and LU factorization are delegated to `faer`. A [`Pattern`] fixes
//! the (row, col) emission order of an assembly loop once; later assemblies
//! only supply values in the same order, and the symbolic LU is reused.

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::LuError;
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat, Triplet};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::Mat;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    inner: SparseColMat<usize, f64>,
}

impl SparseMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let triplets: Vec<Triplet<usize, usize, f64>> = entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let inner = SparseColMat::try_new_from_triplets(nrows, ncols, &triplets)
            .map_err(|e| Error::invalid(format!("sparse matrix construction failed: {e:?}")))?;
        Ok(Self { inner })
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &entries).expect("identity pattern is valid")
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.inner.val().len()
    }

    pub fn as_faer(&self) -> &SparseColMat<usize, f64> {
        &self.inner
    }

    /// Visit stored entries column by column.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, f64)) {
        let col_ptr = self.inner.symbolic().col_ptr();
        let row_idx = self.inner.symbolic().row_idx();
        let val = self.inner.val();
        for col in 0..self.ncols() {
            for k in col_ptr[col]..col_ptr[col + 1] {
                f(row_idx[k], col, val[k]);
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let col_ptr = self.inner.symbolic().col_ptr();
        let rows = &self.inner.symbolic().row_idx()[col_ptr[col]..col_ptr[col + 1]];
        match rows.binary_search(&row) {
            Ok(k) => self.inner.val()[col_ptr[col] + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_add(1.0, x, &mut y);
        y
    }

    /// `y += scale * A x`.
    pub fn mul_vec_add(&self, scale: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols());
        assert_eq!(y.len(), self.nrows());
        self.for_each(|r, c, v| y[r] += scale * v * x[c]);
    }

    /// `y += scale * A^T x`.
    pub fn transpose_mul_vec_add(&self, scale: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows());
        assert_eq!(y.len(), self.ncols());
        self.for_each(|r, c, v| y[c] += scale * v * x[r]);
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each(|r, c, v| s += x[r] * v * y[c]);
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.val().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        self.for_each(|r, c, v| d[(r, c)] += v);
        d
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.nnz());
        self.for_each(|r, c, v| entries.push((c, r, v)));
        Self::from_triplets(self.ncols(), self.nrows(), &entries).expect("transpose of valid matrix")
    }

    /// Fresh LU factorization (symbolic and numeric).
    pub fn lu(&self) -> Result<LuFactorization> {
        let symbolic = SymbolicLu::try_new(self.inner.symbolic())
            .map_err(|e| Error::SolverFailure {
                pivot: None,
                message: format!("symbolic analysis failed: {e:?}"),
            })?;
        LuFactorization::numeric(symbolic, self)
    }
}

/// A fixed emission order of `(row, col)` pairs, possibly with duplicates.
pub struct Pattern {
    nrows: usize,
    ncols: usize,
    len: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu_symbolic: OnceLock<SymbolicLu<usize>>,
}

impl std::fmt::Debug for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pattern")
            .field("nrows", &self.nrows)
            .field("ncols", &self.ncols)
            .field("len", &self.len)
            .finish()
    }
}

impl Pattern {
    pub fn new(nrows: usize, ncols: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let pairs: Vec<Pair<usize, usize>> = pairs.iter().map(|&(r, c)| Pair::new(r, c)).collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(nrows, ncols, &pairs)
            .map_err(|e| Error::invalid(format!("sparsity pattern construction failed: {e:?}")))?;
        Ok(Self {
            nrows,
            ncols,
            len: pairs.len(),
            symbolic,
            argsort,
            lu_symbolic: OnceLock::new(),
        })
    }

    /// Number of emitted entries (before summing duplicates).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Build a matrix from values given in the emission order.
    pub fn matrix(&self, values: &[f64]) -> Result<SparseMatrix> {
        if values.len() != self.len {
            return Err(Error::invalid(format!(
                "pattern expects {} values, got {}",
                self.len,
                values.len()
            )));
        }
        let inner = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, values)
            .map_err(|e| Error::invalid(format!("sparse matrix construction failed: {e:?}")))?;
        Ok(SparseMatrix { inner })
    }

    /// LU of a matrix built by [`Pattern::matrix`], reusing the symbolic
    /// analysis across calls.
    pub fn factorize(&self, matrix: &SparseMatrix) -> Result<LuFactorization> {
        let symbolic = match self.lu_symbolic.get() {
            Some(s) => s.clone(),
            None => {
                let s = SymbolicLu::try_new(self.symbolic.as_ref()).map_err(|e| {
                    Error::SolverFailure {
                        pivot: None,
                        message: format!("symbolic analysis failed: {e:?}"),
                    }
                })?;
                self.lu_symbolic.get_or_init(|| s).clone()
            }
        };
        LuFactorization::numeric(symbolic, matrix)
    }
}

pub struct LuFactorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl LuFactorization {
    fn numeric(symbolic: SymbolicLu<usize>, matrix: &SparseMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::invalid("LU requires a square matrix"));
        }
        let lu = Lu::try_new_with_symbolic(symbolic, matrix.inner.as_ref()).map_err(|e| match e {
            LuError::SymbolicSingular { index } => Error::SolverFailure {
                pivot: Some(index),
                message: "structurally singular matrix".into(),
            },
            LuError::Generic(e) => Error::SolverFailure {
                pivot: None,
                message: format!("{e:?}"),
            },
        })?;
        Ok(Self { lu, n: matrix.nrows() })
    }

    /// Solve `A x = b`; non-finite output means a zero pivot was hit.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(b.as_mut());
        let x: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                pivot: Some(i),
                message: "zero pivot: non-finite solution component".into(),
            });
        }
        Ok(x)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual bound the direct solver guarantees: `|Ax - b| <= tol (|b| + 1)`.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Solve with an existing factorization, applying a few steps of iterative
/// refinement if the residual is above [`SOLVE_TOLERANCE`].
pub fn solve_refined(matrix: &SparseMatrix, lu: &LuFactorization, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut x = lu.solve(rhs)?;
    let bound = SOLVE_TOLERANCE * (norm(rhs) + 1.0);
    for _ in 0..3 {
        let mut r = rhs.to_vec();
        matrix.mul_vec_add(-1.0, &x, &mut r);
        if norm(&r) <= bound {
            return Ok(x);
        }
        let dx = lu.solve(&r)?;
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
    }
    let mut r = rhs.to_vec();
    matrix.mul_vec_add(-1.0, &x, &mut r);
    let res = norm(&r);
    if res <= bound {
        Ok(x)
    } else {
        Err(Error::SolverFailure {
            pivot: None,
            message: format!("residual {res:.3e} above bound {bound:.3e} after refinement"),
        })
    }
}

/// One-shot sparse direct solve.
pub fn linear_solve(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != matrix.nrows() {
        return Err(Error::invalid("right-hand side length does not match matrix"));
    }
    let lu = matrix.lu()?;
    solve_refined(matrix, &lu, rhs)
}
