//! Eigenvalue method: linearize the discrete system around a steady
//! (diffusive) state, eliminate the non-evolving unknowns, and find the
//! leading eigenvalues of the reduced operator
//!
//! ```text
//! S = -M^{-1} (A_ww - A_wy A_yy^{-1} A_yw)
//! ```
//!
//! acting on concentration perturbations. `Re lambda_1 > 0` means the
//! state is unstable and convection sets in. Eigenvalues are computed
//! with a Krylov-Schur iteration in the inner product induced by the
//! mass matrix, with thick restarts and locked conjugate pairs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::jacobian;
use crate::fv::{mass_matrix, residual};
use crate::mesh::MixedDimMesh;
use crate::sparse::{
    lu_factor, quasi_eigvecs, real_schur, sort_schur_desc_real, DenseMat, Eig, LuFactors,
    SparseError, SparseMatrix,
};
use crate::stepping::System;
use crate::Timings;

#[derive(Debug, thiserror::Error)]
pub enum StabilityError {
    #[error("state is not an equilibrium: row {row} residual {residual:.3e} exceeds {tol:.3e}")]
    NotEquilibrium { row: usize, residual: f64, tol: f64 },
    #[error("linear algebra failure: {0}")]
    Linear(#[from] SparseError),
    #[error("eigensolver used {matvecs} operator applications without converging {missing} of the requested values")]
    NoConvergence { matvecs: usize, missing: usize },
    #[error("spectra have {a} and {b} values; cannot pair them")]
    CountMismatch { a: usize, b: usize },
}

/// Anything the eigensolver can iterate on: an operator with a
/// diagonal inner-product weight and an optional start-vector mask.
pub trait Operator {
    fn dim(&self) -> usize;
    fn apply(&self, w: &[f64]) -> Vec<f64>;
    /// diagonal of the inner-product matrix (all positive)
    fn weights(&self) -> &[f64];
    /// components excluded from random start vectors
    fn masked(&self, _i: usize) -> bool {
        false
    }
}

/// A plain sparse matrix in the Euclidean inner product.
pub struct MatrixOperator<'a> {
    pub a: &'a SparseMatrix,
    pub ones: Vec<f64>,
}

impl<'a> MatrixOperator<'a> {
    pub fn new(a: &'a SparseMatrix) -> MatrixOperator<'a> {
        MatrixOperator { a, ones: vec![1.0; a.nrows()] }
    }
}

impl Operator for MatrixOperator<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn apply(&self, w: &[f64]) -> Vec<f64> {
        self.a.matvec_alloc(w)
    }
    fn weights(&self) -> &[f64] {
        &self.ones
    }
}

/// The reduced stability operator, kept in factored form.
pub struct Linearized {
    pub nc: usize,
    a_ww: SparseMatrix,
    a_wy: SparseMatrix,
    a_yw: SparseMatrix,
    a_yy: LuFactors,
    /// mass diagonal, also the inner-product weight
    pub m: Vec<f64>,
    /// concentration components pinned by Dirichlet faces (start
    /// vectors are kept off these)
    pub pinned: Vec<bool>,
    /// H^2/D: multiply a raw eigenvalue (1/s) by this to nondimensionalize
    pub time_scale: f64,
}

impl Operator for Linearized {
    fn dim(&self) -> usize {
        self.nc
    }
    fn weights(&self) -> &[f64] {
        &self.m
    }
    fn masked(&self, i: usize) -> bool {
        self.pinned[i]
    }
    /// v = S w, one sparse solve per call.
    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let t = self.a_yw.matvec_alloc(w);
        let mut y = t;
        self.a_yy.solve_in_place(&mut y);
        // G rows: A_yw w + A_yy dy = 0  =>  dy = -y
        let wy = self.a_wy.matvec_alloc(&y);
        let ww = self.a_ww.matvec_alloc(w);
        (0..self.nc)
            .map(|i| (wy[i] - ww[i]) / self.m[i])
            .collect()
    }
}

/// Verify `x` is an equilibrium and split its Jacobian into the four
/// blocks of the reduced operator.
pub fn linearize_at(
    sys: &System,
    x: &[f64],
    timings: &mut Timings,
) -> Result<Linearized, StabilityError> {
    let t0 = Instant::now();
    let r = sys.residual(x, None);
    let jac = jacobian(|xs| residual(xs, None, sys.mesh, sys.part, sys.pr), x);
    timings.assembly += t0.elapsed().as_secs_f64();
    let n = jac.nrows();
    let xnorm = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(sys.pr.omega_max);
    for i in 0..n {
        let (_, vals) = jac.row(i);
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-7 * scale * xnorm;
        if r[i].abs() > tol {
            return Err(StabilityError::NotEquilibrium { row: i, residual: r[i].abs(), tol });
        }
    }
    let nc = sys.lay.nc;
    let t0 = Instant::now();
    let a_ww = jac.submatrix(0..nc, 0..nc);
    let a_wy = jac.submatrix(0..nc, nc..n);
    let a_yw = jac.submatrix(nc..n, 0..nc);
    let a_yy = lu_factor(&jac.submatrix(nc..n, nc..n))?;
    timings.lu += t0.elapsed().as_secs_f64();
    let m = mass_matrix(sys.mesh);
    let mut pinned = vec![false; nc];
    for (codim, sub) in sys.mesh.subs.iter().enumerate() {
        for (fid, f) in sub.faces.iter().enumerate() {
            if let crate::mesh::FaceBc::Dirichlet(_) = sys.part.transport[codim][fid] {
                pinned[sys.lay.w(codim, f.cells[0])] = true;
            }
        }
    }
    Ok(Linearized {
        nc,
        a_ww,
        a_wy,
        a_yw,
        a_yy,
        m,
        pinned,
        time_scale: sys.height * sys.height / sys.pr.diffusivity,
    })
}

/// One converged (or best-effort) eigenpair of the reduced operator.
#[derive(Clone, Debug)]
pub struct EigenPair {
    /// raw eigenvalue in 1/s; multiply by `time_scale` for the
    /// dimensionless growth rate
    pub value: Eig,
    pub w_re: Vec<f64>,
    pub w_im: Vec<f64>,
    /// relative Euclidean residual ||Sx - lambda x|| / ||lambda x||,
    /// recomputed from the assembled vector
    pub residual: f64,
    pub converged: bool,
}

pub struct Spectrum {
    /// sorted by descending real part
    pub pairs: Vec<EigenPair>,
    pub matvecs: usize,
}

impl Spectrum {
    pub fn values_nondim(&self, time_scale: f64) -> Vec<Eig> {
        self.pairs
            .iter()
            .map(|p| Eig { re: p.value.re * time_scale, im: p.value.im * time_scale })
            .collect()
    }
}

fn dot_m(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| w * x * y).sum()
}

fn norm_m(m: &[f64], a: &[f64]) -> f64 {
    dot_m(m, a, a).max(0.0).sqrt()
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Quasi-triangular block boundaries of the leading p columns may not
/// split a 2x2 block; shrink p if it would.
fn align_to_blocks(t: &DenseMat, mut p: usize) -> usize {
    let starts = crate::sparse::block_starts(t);
    while p > 0 && !starts.contains(&p) {
        p -= 1;
    }
    p
}

/// Leading eigenvalues of the reduced operator by Krylov-Schur with
/// thick restarts in the M-inner product. Returns at least `k`
/// converged pairs on success (one more if a conjugate pair straddles
/// the cut); stops early once `stop_if_unstable` sees a converged
/// positive growth rate.
pub fn krylov_schur<O: Operator>(
    op: &O,
    k: usize,
    tol: f64,
    basis: usize,
    max_matvecs: usize,
    seed: u64,
    stop_if_unstable: bool,
    timings: &mut Timings,
) -> Result<Spectrum, StabilityError> {
    let n = op.dim();
    let k = k.max(1).min(n.saturating_sub(2).max(1));
    let m = if basis == 0 { (4 * k).max(40) } else { basis }
        .min(n)
        .max(k + 2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<f64> = (0..n)
        .map(|i| if op.masked(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
        .collect();
    let nv = norm_m(op.weights(), &v0);
    for v in &mut v0 {
        *v /= nv;
    }

    let mut basis_v: Vec<Vec<f64>> = vec![v0];
    let mut h = DenseMat::zeros(m + 1, m);
    let mut active = 0usize; // columns retained from previous cycles
    let mut matvecs = 0usize;

    loop {
        // expand the decomposition from `active` to m columns
        for j in active..m {
            let t0 = Instant::now();
            let mut w = op.apply(&basis_v[j]);
            matvecs += 1;
            timings.matvec += t0.elapsed().as_secs_f64();
            let t0 = Instant::now();
            for pass in 0..2 {
                for (i, vi) in basis_v.iter().enumerate().take(j + 1) {
                    let c = dot_m(op.weights(), vi, &w);
                    for (wx, vx) in w.iter_mut().zip(vi) {
                        *wx -= c * vx;
                    }
                    if pass == 0 {
                        h[(i, j)] = c;
                    } else {
                        h[(i, j)] += c;
                    }
                }
            }
            let beta = norm_m(op.weights(), &w);
            h[(j + 1, j)] = beta;
            if beta > 1e-14 {
                for wx in &mut w {
                    *wx /= beta;
                }
            } else {
                // invariant subspace found: continue with a fresh direction
                let mut f: Vec<f64> = (0..n)
                    .map(|i| if op.masked(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                    .collect();
                for _ in 0..2 {
                    for vi in basis_v.iter().take(j + 1) {
                        let c = dot_m(op.weights(), vi, &f);
                        for (fx, vx) in f.iter_mut().zip(vi) {
                            *fx -= c * vx;
                        }
                    }
                }
                let nf = norm_m(op.weights(), &f);
                for fx in &mut f {
                    *fx /= nf;
                }
                w = f;
            }
            timings.ortho += t0.elapsed().as_secs_f64();
            basis_v.push(w);
        }
        let beta = h[(m, m - 1)];

        // Schur form of the m x m head, sorted by descending real part
        let mut hm = DenseMat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                hm[(i, j)] = h[(i, j)];
            }
        }
        let mut sf = real_schur(&hm)?;
        sort_schur_desc_real(&mut sf);
        let b_new: Vec<f64> = (0..m).map(|j| beta * sf.q[(m - 1, j)]).collect();

        // count leading converged Ritz blocks
        let starts = crate::sparse::block_starts(&sf.t);
        let mut conv_cols = 0usize;
        let mut unstable_seen = false;
        for (bi, &s) in starts.iter().enumerate() {
            let e = if bi + 1 < starts.len() { starts[bi + 1] } else { m };
            let (eig, _) = crate::sparse::block_eigs(&sf.t, s);
            let est = if e - s == 2 {
                (b_new[s] * b_new[s] + b_new[s + 1] * b_new[s + 1]).sqrt()
            } else {
                b_new[s].abs()
            };
            let mag = (eig.re * eig.re + eig.im * eig.im).sqrt();
            if est <= tol * mag.max(1e-300) {
                conv_cols = e;
                if eig.re > 0.0 {
                    unstable_seen = true;
                }
            } else {
                break;
            }
        }
        let done = conv_cols >= k || (stop_if_unstable && unstable_seen);
        let budget_hit = matvecs >= max_matvecs;

        if done || budget_hit {
            // assemble eigenpairs of the leading blocks from the final
            // Schur form, recomputing residuals explicitly
            let want = k.max(conv_cols.min(k + 1));
            let vecs = quasi_eigvecs(&sf.t);
            let mut pairs = Vec::new();
            let mut col = 0usize;
            while col < m && pairs.len() < want {
                let (eig, width) = crate::sparse::block_eigs(&sf.t, col);
                for sub in 0..width.min(2) {
                    if pairs.len() >= want && sub > 0 {
                        break;
                    }
                    let idx = col + sub;
                    let (yr, yi) = &vecs[idx];
                    let mut xr = vec![0.0; n];
                    let mut xi = vec![0.0; n];
                    for t in 0..m {
                        // coordinates in the original basis: V * (Q y)
                        let mut qr = 0.0;
                        let mut qi = 0.0;
                        for s in 0..m {
                            qr += sf.q[(t, s)] * yr[s];
                            qi += sf.q[(t, s)] * yi[s];
                        }
                        for (x, v) in xr.iter_mut().zip(&basis_v[t]) {
                            *x += qr * v;
                        }
                        for (x, v) in xi.iter_mut().zip(&basis_v[t]) {
                            *x += qi * v;
                        }
                    }
                    let nrm = (dot_m(op.weights(), &xr, &xr) + dot_m(op.weights(), &xi, &xi)).sqrt();
                    for v in xr.iter_mut().chain(xi.iter_mut()) {
                        *v /= nrm;
                    }
                    let value = if sub == 0 { eig } else { Eig { re: eig.re, im: -eig.im } };
                    let t0 = Instant::now();
                    let sxr = op.apply(&xr);
                    let sxi = if value.im != 0.0 { op.apply(&xi) } else { vec![0.0; n] };
                    matvecs += if value.im != 0.0 { 2 } else { 1 };
                    timings.matvec += t0.elapsed().as_secs_f64();
                    let mut rr = vec![0.0; n];
                    let mut ri = vec![0.0; n];
                    for i in 0..n {
                        rr[i] = sxr[i] - (value.re * xr[i] - value.im * xi[i]);
                        ri[i] = sxi[i] - (value.re * xi[i] + value.im * xr[i]);
                    }
                    let mag = (value.re * value.re + value.im * value.im).sqrt();
                    let xnorm = (norm2(&xr).powi(2) + norm2(&xi).powi(2)).sqrt();
                    let res = (norm2(&rr).powi(2) + norm2(&ri).powi(2)).sqrt()
                        / (mag * xnorm).max(1e-300);
                    pairs.push(EigenPair {
                        value,
                        w_re: xr,
                        w_im: xi,
                        residual: res,
                        converged: res <= 10.0 * tol,
                    });
                    if width == 1 {
                        break;
                    }
                }
                col += width;
            }
            let missing = pairs.iter().filter(|p| !p.converged).count();
            if budget_hit && !done && missing > 0 {
                return Err(StabilityError::NoConvergence { matvecs, missing });
            }
            return Ok(Spectrum { pairs, matvecs });
        }

        // thick restart: keep the converged head plus a buffer
        let p = align_to_blocks(&sf.t, conv_cols.max(k + 2).max(m / 2).min(m - 1)).max(1);
        let mut new_v: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
        for j in 0..p {
            let mut col = vec![0.0; n];
            for t in 0..m {
                let q = sf.q[(t, j)];
                for (x, v) in col.iter_mut().zip(&basis_v[t]) {
                    *x += q * v;
                }
            }
            new_v.push(col);
        }
        new_v.push(basis_v[m].clone());
        basis_v = new_v;
        let mut hn = DenseMat::zeros(m + 1, m);
        for i in 0..p {
            for j in 0..p {
                hn[(i, j)] = sf.t[(i, j)];
            }
        }
        for j in 0..p {
            hn[(p, j)] = b_new[j];
        }
        h = hn;
        active = p;
    }
}

/// Stability verdict for a scenario at its diffusive equilibrium.
pub struct Assessment {
    pub spectrum: Spectrum,
    pub time_scale: f64,
    pub unstable: bool,
}

pub fn assess_stability(
    sys: &System,
    x_eq: &[f64],
    k: usize,
    tol: f64,
    basis: usize,
    max_matvecs: usize,
    seed: u64,
    timings: &mut Timings,
) -> Result<Assessment, StabilityError> {
    let lin = linearize_at(sys, x_eq, timings)?;
    let spectrum = krylov_schur(&lin, k, tol, basis, max_matvecs, seed, false, timings)?;
    let unstable = spectrum
        .pairs
        .iter()
        .any(|p| p.converged && p.value.re > 0.0);
    Ok(Assessment { spectrum, time_scale: lin.time_scale, unstable })
}

/// Pairwise relative differences of two spectra sorted by descending
/// real part; the estimate of the discretization error of the coarse
/// grid eigenvalues against a finer grid.
pub fn grid_error(coarse: &[Eig], fine: &[Eig]) -> Result<Vec<f64>, StabilityError> {
    if coarse.len() != fine.len() {
        return Err(StabilityError::CountMismatch { a: coarse.len(), b: fine.len() });
    }
    Ok(coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| {
            let dr = c.re - f.re;
            let di = c.im - f.im;
            let mag = (f.re * f.re + f.im * f.im).sqrt().max(1e-300);
            (dr * dr + di * di).sqrt() / mag
        })
        .collect())
}

/// Geometric classification of a 3-d mode by where its interface flux
/// perturbation lives: mostly within a single fracture plane
/// (intrafracture) or spread across several (interfracture).
#[derive(Clone, Debug, PartialEq)]
pub enum ModeClass {
    Intrafracture { axis: usize, coordinate: f64, share: f64 },
    Interfracture { max_share: f64 },
}

pub fn classify_mode_3d(
    mesh: &MixedDimMesh,
    lin: &Linearized,
    pair: &EigenPair,
) -> ModeClass {
    // reconstruct the eliminated unknowns: dy = -A_yy^{-1} A_yw dw
    let energy_of = |w: &[f64]| -> Vec<f64> {
        let mut y = lin.a_yw.matvec_alloc(w);
        lin.a_yy.solve_in_place(&mut y);
        y
    };
    let yr = energy_of(&pair.w_re);
    let yi = if pair.value.im != 0.0 { energy_of(&pair.w_im) } else { vec![0.0; yr.len()] };
    // Lambda entries sit right after the pressure block inside y
    let lam_off = lin.nc;
    let mut by_plane: std::collections::HashMap<(usize, i64), f64> =
        std::collections::HashMap::new();
    let mut total = 0.0;
    for (gi, g) in mesh.interfaces.iter().enumerate() {
        if g.hi_codim != 0 {
            continue;
        }
        let mut axis = 0;
        for a in 1..3 {
            if g.normal[a].abs() > g.normal[axis].abs() {
                axis = a;
            }
        }
        let lo = &mesh.subs[1].cells[g.lo_cell];
        let coord = lo.centroid[axis];
        let key = (axis, (coord / mesh.h[axis] * 4.0).round() as i64);
        let e = yr[lam_off + gi].powi(2) + yi[lam_off + gi].powi(2);
        *by_plane.entry(key).or_insert(0.0) += e;
        total += e;
    }
    if total == 0.0 {
        return ModeClass::Interfracture { max_share: 0.0 };
    }
    let (&(axis, kq), &best) = by_plane
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let share = best / total;
    if share >= 0.8 {
        ModeClass::Intrafracture {
            axis,
            coordinate: kq as f64 * mesh.h[axis] / 4.0,
            share,
        }
    } else {
        ModeClass::Interfracture { max_share: share }
    }
}
