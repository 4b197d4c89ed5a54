//! Forward-mode automatic differentiation with sparse derivative
//! propagation. Residual assembly is written once, generic over
//! [`Scalar`]; evaluating it on [`Dual`] values yields the Newton
//! Jacobian and the stability blocks from the same code path.

use crate::sparse::{SparseBuilder, SparseMatrix};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain `f64` evaluation and dual-number
/// differentiation. Only the primitives the residual needs.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    /// Multiply by a constant (cheaper than constructing a constant dual).
    fn scale(&self, c: f64) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

/// Scalar with a sparse gradient: pairs (seed index, partial), sorted
/// by index with no duplicates.
#[derive(Clone, Debug, Default)]
pub struct Dual {
    pub v: f64,
    pub d: Vec<(u32, f64)>,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: Vec::new() }
    }

    /// Independent variable: value `v`, derivative 1 w.r.t. seed `idx`.
    pub fn seed(v: f64, idx: usize) -> Self {
        Dual {
            v,
            d: vec![(idx as u32, 1.0)],
        }
    }

    pub fn deriv(&self, idx: usize) -> f64 {
        match self.d.binary_search_by_key(&(idx as u32), |p| p.0) {
            Ok(k) => self.d[k].1,
            Err(_) => 0.0,
        }
    }

    /// c1·da + c2·db, merged by sorted seed index.
    fn lin_comb(da: &[(u32, f64)], c1: f64, db: &[(u32, f64)], c2: f64) -> Vec<(u32, f64)> {
        let mut out = Vec::with_capacity(da.len() + db.len());
        let (mut i, mut j) = (0, 0);
        while i < da.len() || j < db.len() {
            if j >= db.len() || (i < da.len() && da[i].0 < db[j].0) {
                out.push((da[i].0, c1 * da[i].1));
                i += 1;
            } else if i >= da.len() || db[j].0 < da[i].0 {
                out.push((db[j].0, c2 * db[j].1));
                j += 1;
            } else {
                out.push((da[i].0, c1 * da[i].1 + c2 * db[j].1));
                i += 1;
                j += 1;
            }
        }
        out
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v + rhs.v,
            d: Dual::lin_comb(&self.d, 1.0, &rhs.d, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v - rhs.v,
            d: Dual::lin_comb(&self.d, 1.0, &rhs.d, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v * rhs.v,
            d: Dual::lin_comb(&self.d, rhs.v, &rhs.d, self.v),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        // d(a/b) = da/b - a db/b²
        let inv = 1.0 / rhs.v;
        Dual {
            v: self.v * inv,
            d: Dual::lin_comb(&self.d, inv, &rhs.d, -self.v * inv * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(mut self) -> Dual {
        self.v = -self.v;
        for p in &mut self.d {
            p.1 = -p.1;
        }
        self
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn scale(&self, c: f64) -> Self {
        Dual {
            v: self.v * c,
            d: self.d.iter().map(|&(i, g)| (i, g * c)).collect(),
        }
    }
}

/// Assemble the Jacobian ∂r/∂x of `residual_fn` at `state` by seeding
/// every DOF and evaluating once.
pub fn jacobian<F>(residual_fn: F, state: &[f64]) -> SparseMatrix
where
    F: Fn(&[Dual]) -> Vec<Dual>,
{
    let x: Vec<Dual> = state
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seed(v, i))
        .collect();
    let r = residual_fn(&x);
    let mut b = SparseBuilder::new(r.len(), state.len());
    for (i, ri) in r.iter().enumerate() {
        for &(j, g) in &ri.d {
            b.add(i, j as usize, g);
        }
    }
    b.finalize()
}

/// Central finite-difference Jacobian, dense; test oracle only.
pub fn fd_jacobian<F>(f: F, state: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = state.len();
    let m = f(state).len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut x = state.to_vec();
    for j in 0..n {
        let h = 1e-6 * (1.0 + state[j].abs());
        x[j] = state[j] + h;
        let fp = f(&x);
        x[j] = state[j] - h;
        let fm = f(&x);
        x[j] = state[j];
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
