//! Coordinate-format sparse matrices and a cached direct LU solver.

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::prelude::Solve;
use faer::Mat;

use crate::solver::SolverError;

/// Square matrix in coordinate form; duplicate entries are summed.
///
/// Assembly loops that visit the same entries in the same order produce the
/// same pattern, which lets [`DirectSolver`] reuse its symbolic analysis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Default::default()
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.n && c < self.n);
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            m.push(i, i, 1.0);
        }
        m
    }

    pub fn nnz_entries(&self) -> usize {
        self.vals.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for k in 0..self.vals.len() {
            y[self.rows[k]] += self.vals[k] * x[self.cols[k]];
        }
        y
    }

    /// Dense row-major copy; intended for tests and small checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for k in 0..self.vals.len() {
            d[self.rows[k]][self.cols[k]] += self.vals[k];
        }
        d
    }

    /// Dense copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for k in 0..self.vals.len() {
            if self.cols[k] == j {
                c[self.rows[k]] += self.vals[k];
            }
        }
        c
    }

    fn same_pattern(&self, rows: &[usize], cols: &[usize]) -> bool {
        self.rows == rows && self.cols == cols
    }
}

struct Analysis {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

/// Sparse LU with the symbolic factorization cached across calls that share
/// a pattern.
#[derive(Default)]
pub struct DirectSolver {
    analysis: Option<Analysis>,
    pub symbolic_reuses: usize,
}

impl DirectSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves `a·x = b`.
    pub fn solve(&mut self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        assert_eq!(b.len(), a.n, "right-hand side length");
        if a.n == 0 {
            return Ok(Vec::new());
        }
        let reuse = matches!(&self.analysis, Some(an) if an.n == a.n && a.same_pattern(&an.rows, &an.cols));
        if reuse {
            self.symbolic_reuses += 1;
        } else {
            let idx: Vec<Pair<usize, usize>> = a
                .rows
                .iter()
                .zip(&a.cols)
                .map(|(&r, &c)| Pair::new(r, c))
                .collect();
            let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(a.n, a.n, &idx)
                .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
            let lu = SymbolicLu::try_new(symbolic.as_ref())
                .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
            self.analysis = Some(Analysis {
                n: a.n,
                rows: a.rows.clone(),
                cols: a.cols.clone(),
                symbolic,
                argsort,
                lu,
            });
        }
        let an = self.analysis.as_ref().expect("analysis present");
        let mat = SparseColMat::new_from_argsort(an.symbolic.clone(), &an.argsort, &a.vals)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(an.lu.clone(), mat.as_ref()).map_err(map_lu)?;

        let solve = |rhs: &[f64]| -> Vec<f64> {
            let mut m = Mat::<f64>::zeros(a.n, 1);
            for (i, v) in rhs.iter().enumerate() {
                m[(i, 0)] = *v;
            }
            let x = lu.solve(&m);
            (0..a.n).map(|i| x[(i, 0)]).collect()
        };
        let mut x = solve(b);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Singular { pivot: i });
        }
        // One step of iterative refinement.
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        let dx = solve(&r);
        if dx.iter().all(|v| v.is_finite()) {
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Ok(x)
    }
}

fn map_lu(e: LuError) -> SolverError {
    match e {
        LuError::SymbolicSingular { index } => SolverError::Singular { pivot: index },
        LuError::Generic(g) => SolverError::Factorization(format!("{g:?}")),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
