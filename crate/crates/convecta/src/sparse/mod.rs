//! Minimal sparse/dense linear algebra used by the assembly, the Newton
//! solver and the eigensolver.
//!
//! Sparse matrices are stored row-compressed. The LU factorization is
//! delegated to `faer` (fill-reducing ordering plus partial pivoting)
//! behind the [`LuFactors`] contract; the dense Schur kernel for the
//! eigensolver's small projected problems is implemented here.

pub mod dense;
mod lu;

pub use dense::{block_eigs, block_starts, dense_eig_small, quasi_eigs, quasi_eigvecs, real_schur, sort_schur_desc_real, DenseMat, Eig, SchurForm};
pub use lu::{lu_factor, LuFactors};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("matrix is singular or structurally deficient: {0}")]
    SingularMatrix(String),
    #[error("QR iteration failed to converge on a {0}x{0} matrix")]
    NoConvergence(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-compressed sparse matrix.
///
/// Column indices are sorted and unique within each row after
/// [`SparseBuilder::finalize`]; explicitly stored zeros are dropped.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// y = A x. Per-row accumulation in fixed index order, so the result is
    /// bit-reproducible.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Extract the sub-matrix with the given row and column ranges.
    pub fn submatrix(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> SparseMatrix {
        let mut b = SparseBuilder::new(rows.len(), cols.len());
        for (bi, i) in rows.clone().enumerate() {
            let (cj, vv) = self.row(i);
            for (&j, &v) in cj.iter().zip(vv) {
                if cols.contains(&j) {
                    b.add(bi, j - cols.start, v);
                }
            }
        }
        b.finalize()
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Matrix-market text export, for debugging.
    pub fn write_matrix_market<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Triplet accumulator; duplicate entries are summed on finalize.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.triplets.push((i, j, v));
        }
    }

    pub fn finalize(mut self) -> SparseMatrix {
        self.triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.triplets.len());
        let mut t = 0;
        for i in 0..self.nrows {
            while t < self.triplets.len() && self.triplets[t].0 == i {
                let j = self.triplets[t].1;
                let mut acc = 0.0;
                while t < self.triplets.len() && self.triplets[t].0 == i && self.triplets[t].1 == j
                {
                    acc += self.triplets[t].2;
                    t += 1;
                }
                if acc != 0.0 {
                    col_idx.push(j);
                    values.push(acc);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Identity matrix, mostly for tests.
pub fn identity(n: usize) -> SparseMatrix {
    let mut b = SparseBuilder::new(n, n);
    for i in 0..n {
        b.add(i, i, 1.0);
    }
    b.finalize()
}
