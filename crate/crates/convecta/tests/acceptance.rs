//! End-to-end acceptance suite. Each numbered check prints one
//! PASS/FAIL line; the test fails if any gating check fails. Check 13
//! (cost profile) is informational only.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to watch the
//! lines appear; on failure the captured output is printed anyway.

use std::time::Instant;

use convecta::autodiff::jacobian;
use convecta::fv::{
    self, darcy_flux, interface_w_traces, mass_matrix, residual as fv_residual, Layout,
};
use convecta::mesh::{build_cartesian_mdg, face_partition, FaceBc, Fracture};
use convecta::model::{
    self, gap_scenario, hrl_bc, project_on_eigenbasis, rayleigh, MaterialParams, RunControls,
    Scenario,
};
use convecta::sparse::{dense_eig_small, DenseMat, Eig, SparseBuilder};
use convecta::stability::{
    classify_mode_3d, krylov_schur, linearize_at, MatrixOperator, ModeClass, Operator, Spectrum,
};
use convecta::stepping::{
    advance, advance_to_steady, diffusive_equilibrium, initial_state, AdvanceOpts, System,
};
use convecta::Timings;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

struct Ledger {
    lines: Vec<(usize, bool, String, bool)>,
}

impl Ledger {
    fn new() -> Ledger {
        Ledger { lines: Vec::new() }
    }
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        self.entry(id, pass, detail, true);
    }
    fn record_soft(&mut self, id: usize, pass: bool, detail: String) {
        self.entry(id, pass, detail, false);
    }
    fn entry(&mut self, id: usize, pass: bool, detail: String, gating: bool) {
        let tag = if pass {
            "PASS"
        } else if gating {
            "FAIL"
        } else {
            "FAIL (non-gating)"
        };
        println!("criterion {id:2}: {tag} — {detail}");
        self.lines.push((id, pass, detail, gating));
    }
    fn finish(self) {
        let failed: Vec<_> = self
            .lines
            .iter()
            .filter(|(_, pass, _, gating)| !pass && *gating)
            .collect();
        println!("----");
        println!(
            "{} of {} checks passed",
            self.lines.iter().filter(|l| l.1).count(),
            self.lines.len()
        );
        assert!(
            failed.is_empty(),
            "failed criteria: {:?}",
            failed.iter().map(|l| l.0).collect::<Vec<_>>()
        );
    }
}

/// Leading eigenvalues of a scenario's diffusive equilibrium,
/// nondimensionalized by H^2/D. Returns (values, spectrum, matvecs).
fn leading_eigs(sc: &Scenario, k: usize, timings: &mut Timings) -> (Vec<Eig>, Spectrum) {
    let mesh = sc.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc.bc).expect("bc");
    let sys = System::new(&mesh, &part, &sc.params);
    let x0 = diffusive_equilibrium(&sys, timings).expect("equilibrium");
    let lin = linearize_at(&sys, &x0, timings).expect("linearize");
    let ts = lin.time_scale;
    let sp = krylov_schur(&lin, k, sc.eig.tol, sc.eig.basis, sc.eig.max_matvecs, SEED, false, timings)
        .expect("eigensolver");
    let vals = sp.values_nondim(ts);
    (vals, sp)
}

fn load(name: &str) -> Scenario {
    model::load_scenario(name).expect(name)
}

/// March a scenario to a verified steady state, checking conservation at
/// every accepted step. Returns (sherwood, residual_max, mass_err_max,
/// verified, wall_seconds).
fn direct_run(sc: &Scenario, timings: &mut Timings) -> (f64, f64, f64, bool, f64) {
    let start = Instant::now();
    let mesh = sc.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc.bc).expect("bc");
    let sys = System::new(&mesh, &part, &sc.params);
    let x0 = initial_state(&sys, &sc.run, SEED, timings).expect("initial state");
    let mut res_max = 0.0f64;
    let mut mass_max = 0.0f64;
    let out = advance_to_steady(&sys, x0, &sc.run, &sc.eig, SEED, timings, |rec, _| {
        res_max = res_max.max(rec.residual);
        mass_max = mass_max.max(rec.mass_error);
    })
    .expect("march");
    let sh = sys.sherwood(&out.out.x);
    (sh, res_max, mass_max, out.verified && out.out.steady, start.elapsed().as_secs_f64())
}

fn hrl_box(kb: f64, nx: usize, ny: usize) -> Scenario {
    let mut sc = load("hrl-a1");
    sc.params.k = kb;
    sc.resolution = [nx, ny, 0];
    sc
}

// ---------------------------------------------------------------- 1
/// Sign of the leading eigenvalue flips at the critical Rayleigh number
/// 4 pi^2 in a homogeneous closed box.
fn criterion_1(led: &mut Ledger, timings: &mut Timings) {
    let sc0 = load("hrl-a1");
    let h = sc0.height();
    // bracket Ra in [20, 62] by scaling the bulk permeability
    let k_of_ra = |ra: f64| sc0.params.k * ra / rayleigh(&sc0.params, h);
    let mut lo = k_of_ra(20.0);
    let mut hi = k_of_ra(62.0);
    let lam = |k: f64, t: &mut Timings| leading_eigs(&hrl_box(k, 40, 20), 1, t).0[0].re;
    let mut solves = 0;
    let (l_lo, l_hi) = (lam(lo, timings), lam(hi, timings));
    solves += 2;
    if !(l_lo < 0.0 && l_hi > 0.0) {
        led.record(1, false, format!("bracket failed: lambda(Ra=20)={l_lo:.3}, lambda(Ra=62)={l_hi:.3}"));
        return;
    }
    while solves < 8 {
        let mid = 0.5 * (lo + hi);
        if lam(mid, timings) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        solves += 1;
    }
    let ra_cross = rayleigh(
        &MaterialParams { k: 0.5 * (lo + hi), ..sc0.params.clone() },
        h,
    );
    let ra_c = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let rel = (ra_cross - ra_c).abs() / ra_c;
    led.record(
        1,
        rel <= 0.10,
        format!("sign change at Ra = {ra_cross:.2} vs 4pi^2 = {ra_c:.2} ({:.1}% off, {solves} eigensolves)", 100.0 * rel),
    );
}

// ---------------------------------------------------------------- 2
/// Subcritical homogeneous box decays at the pure-diffusion rate -pi^2,
/// converging under refinement.
fn criterion_2(led: &mut Ledger, timings: &mut Timings) {
    let pi2 = std::f64::consts::PI.powi(2);
    let l_coarse = leading_eigs(&hrl_box(1e-16, 40, 20), 1, timings).0[0].re;
    let l_fine = leading_eigs(&hrl_box(1e-16, 80, 40), 1, timings).0[0].re;
    let rel = (l_coarse + pi2).abs() / pi2;
    let improves = (l_fine + pi2).abs() <= (l_coarse + pi2).abs() + 1e-9;
    led.record(
        2,
        rel <= 0.02 && improves,
        format!("lambda1 = {l_coarse:.4} (40x20), {l_fine:.4} (80x40) vs -pi^2 = {:.4}", -pi2),
    );
}

// ---------------------------------------------------------------- 3, 9, 5 (shared runs)
/// Direct-method Sherwood numbers for the catalog scenarios, with
/// conservation checked at every accepted step, plus the sign law
/// Sh > 1.005 <=> lambda1 > 0 across all 2D scenarios.
fn criteria_3_5_9(led: &mut Ledger, timings: &mut Timings) {
    let bands: &[(&str, f64, f64)] = &[
        ("hrl-a1", 1.00, 0.01),
        ("hrl-a2", 1.38, 0.15),
        ("hrl-d1", 1.08, 0.05),
        ("hrl-d11", 1.37, 0.15),
        ("hrl-e9b", 2.92, 0.35),
    ];
    let mut c3_ok = true;
    let mut c3_lines = Vec::new();
    let mut res_max = 0.0f64;
    let mut mass_max = 0.0f64;
    let mut sherwoods: Vec<(String, f64)> = Vec::new();
    for &(name, mid, half) in bands {
        let sc = load(name);
        let (sh, rm, mm, verified, secs) = direct_run(&sc, timings);
        res_max = res_max.max(rm);
        mass_max = mass_max.max(mm);
        let ok = (sh - mid).abs() <= half && verified;
        c3_ok &= ok;
        c3_lines.push(format!("{name} Sh={sh:.4} (want {mid}±{half}, {secs:.0} s{})",
            if verified { "" } else { ", unverified" }));
        sherwoods.push((name.to_string(), sh));
    }
    led.record(3, c3_ok, c3_lines.join("; "));

    // 9a: conservation across every accepted step of the runs above
    let cons_ok = res_max <= 1e-10 && mass_max <= 1e-10;
    // 9b: TPFA reproduces a linear pressure field exactly
    let tpfa = tpfa_linear_pressure_error();
    led.record(
        9,
        cons_ok && tpfa <= 1e-12,
        format!("max step residual {res_max:.2e}, max solute balance {mass_max:.2e}, TPFA linear-field error {tpfa:.2e}"),
    );

    // 5: sign law over all 2D scenarios (closed-box family)
    let mut c5_ok = true;
    let mut c5_lines = Vec::new();
    for name in ["hrl-d2", "hrl-d2star"] {
        let sc = load(name);
        let (sh, _, _, verified, _) = direct_run(&sc, timings);
        c5_ok &= verified;
        sherwoods.push((name.to_string(), sh));
    }
    for (name, sh) in &sherwoods {
        let sc = load(name);
        let l1 = leading_eigs(&sc, 1, timings).0[0].re;
        let agree = (*sh > 1.005) == (l1 > 0.0);
        c5_ok &= agree;
        c5_lines.push(format!("{name}: Sh={sh:.4}, lambda1={l1:.2}{}", if agree { "" } else { " MISMATCH" }));
    }
    led.record(5, c5_ok, c5_lines.join("; "));
}

/// Max relative error of TPFA face fluxes for p = a*x + rho0*g*(H - y),
/// w = 0 on a homogeneous unfractured box (exact for linear fields on
/// K-orthogonal grids).
fn tpfa_linear_pressure_error() -> f64 {
    let sc = hrl_box(1e-16, 16, 8);
    let mesh = sc.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc.bc).expect("bc");
    let pr = &sc.params;
    let lay = Layout::new(&mesh);
    let a = 7.3; // arbitrary horizontal gradient, Pa/m
    let mut x = vec![0.0; lay.n()];
    let h = mesh.extents[1];
    for (i, c) in mesh.subs[0].cells.iter().enumerate() {
        x[lay.p(0, i)] = a * c.centroid[0] + pr.rho0 * pr.g * (h - c.centroid[1]);
    }
    // With w = 0 the exact Darcy flux through a face with unit normal n
    // and area A is -k/(phi mu) * grad(p).n * A; two-point differencing
    // must reproduce it exactly for a linear field.
    let fluxes = darcy_flux(&x, &mesh, &part, pr);
    let mob = pr.k / (pr.phi * pr.mu);
    let grad = [a, -pr.rho0 * pr.g];
    let mut worst = 0.0f64;
    for (fid, f) in mesh.subs[0].faces.iter().enumerate() {
        if !matches!(part.flow[0][fid], FaceBc::Interior) {
            continue;
        }
        let (c0, c1) = (&mesh.subs[0].cells[f.cells[0]], &mesh.subs[0].cells[f.cells[1]]);
        let dx = c1.centroid[0] - c0.centroid[0];
        let dy = c1.centroid[1] - c0.centroid[1];
        let dist = (dx * dx + dy * dy).sqrt();
        // positive flux means flow from cell 0 toward cell 1
        let exact = -mob * f.area * (grad[0] * dx + grad[1] * dy) / dist;
        let scale = mob * f.area * (a.abs() + pr.rho0 * pr.g);
        worst = worst.max((fluxes.face[0][fid] - exact).abs() / scale);
    }
    worst
}

// ---------------------------------------------------------------- 4
/// The top-8 spectrum of the single-loop network matches the expected
/// signs and leading magnitude, with small solver-reported residuals.
fn criterion_4(led: &mut Ledger, timings: &mut Timings) {
    let sc = load("hrl-d11");
    let (vals, sp) = leading_eigs(&sc, 8, timings);
    let signs_ok = vals.len() >= 8
        && vals[0].re > 0.0
        && vals.iter().skip(1).take(7).all(|v| v.re < 0.0);
    let target = 61.75;
    let rel = (vals[0].re - target).abs() / target;
    let eps_max = sp.pairs.iter().take(8).fold(0.0f64, |a, p| a.max(p.residual));
    led.record(
        4,
        signs_ok && rel <= 0.2 && eps_max <= 1e-3,
        format!(
            "lambda = [{}], |l1-61.75|/61.75 = {:.1}%, max residual {eps_max:.1e}",
            vals.iter().take(8).map(|v| format!("{:.2}", v.re)).collect::<Vec<_>>().join(", "),
            100.0 * rel
        ),
    );
}

// ---------------------------------------------------------------- 6
/// Steady diffusion across a single horizontal fracture shows the
/// reduced-model concentration jump omega_max/(1 + H/b).
fn criterion_6(led: &mut Ledger, timings: &mut Timings) {
    let mut ok = true;
    let mut lines = Vec::new();
    for b_rel in [1e-2, 1e-3, 1e-4] {
        let h = 10.0;
        let b = b_rel * h;
        let pr = MaterialParams {
            k_f: Some(1e-16),
            b: Some(b),
            ..load("hrl-a1").params
        };
        let fr = Fracture { lo: [0.0, 0.5 * h, 0.0], hi: [h, 0.5 * h, 0.0], aperture: b, perm: 1e-16 };
        let mesh = build_cartesian_mdg([h, h, 0.0], [40, 40, 0], &[fr], pr.k).expect("mesh");
        let bc = hrl_bc(pr.omega_max);
        let part = face_partition(&mesh, &bc).expect("bc");
        let sys = System::new(&mesh, &part, &pr);
        let x = diffusive_equilibrium(&sys, timings).expect("equilibrium");
        let traces = interface_w_traces(&x, &mesh);
        // interfaces sit above and below the fracture; the jump is the
        // difference between the mean trace on each side
        let (mut above, mut below) = (Vec::new(), Vec::new());
        for (g, tr) in mesh.interfaces.iter().zip(&traces) {
            let hi_cell = &mesh.subs[g.hi_codim].cells[g.hi_cell];
            if hi_cell.centroid[1] > 0.5 * h {
                above.push(*tr);
            } else {
                below.push(*tr);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let jump = mean(&above) - mean(&below);
        let exact = pr.omega_max / (1.0 + h / b);
        let rel = (jump - exact).abs() / exact;
        ok &= rel <= 0.02;
        lines.push(format!("b/H={b_rel:.0e}: jump {jump:.3e} vs {exact:.3e} ({:.2}%)", 100.0 * rel));
    }
    led.record(6, ok, lines.join("; "));
}

// ---------------------------------------------------------------- 7
/// Early-time growth of a seeded eigenmode matches the computed
/// eigenvalue, and the deviation stays inside the leading eigenspace.
fn criterion_7(led: &mut Ledger, timings: &mut Timings) {
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, tol) in [("hrl-d11", 0.15), ("hrl-e9b", 0.35)] {
        let sc = load(name);
        let mesh = sc.build_mesh().expect("mesh");
        let part = face_partition(&mesh, &sc.bc).expect("bc");
        let sys = System::new(&mesh, &part, &sc.params);
        let x0 = diffusive_equilibrium(&sys, timings).expect("equilibrium");
        let lin = linearize_at(&sys, &x0, timings).expect("linearize");
        let ts = lin.time_scale;
        let sp = krylov_schur(&lin, 2, sc.eig.tol, sc.eig.basis, sc.eig.max_matvecs, SEED, false, timings)
            .expect("eigensolver");
        let pair = &sp.pairs[0];
        let lam = pair.value.re; // 1/s
        let nc = lin.nc;
        let m = mass_matrix(&mesh);
        let vol: f64 = m.iter().sum::<f64>().sqrt();
        let wmax = sc.params.omega_max;
        // seed the mode at 1e-4 * omega_max in the volume-normalized norm
        let dev_norm = |x: &[f64]| {
            (0..nc).map(|i| m[i] * (x[i] - x0[i]).powi(2)).sum::<f64>().sqrt() / vol
        };
        let enorm = (0..nc).map(|i| m[i] * pair.w_re[i].powi(2)).sum::<f64>().sqrt() / vol;
        let amp = 1e-4 * wmax / enorm;
        let mut x = x0.clone();
        for i in 0..nc {
            if !lin.pinned[i] {
                x[i] += amp * pair.w_re[i];
            }
        }
        fv::complete_interface_dofs(&mut x, &mesh, &part, &sys.pr);
        let dt = 0.05 / lam;
        let horizon = 120.0 * dt;
        let opts = AdvanceOpts {
            t_end: Some(horizon),
            fixed_dt: Some(dt),
            controls: RunControls { max_steps: 200, ..sc.run.clone() },
            ..AdvanceOpts::default()
        };
        let mut samples: Vec<(f64, f64, Vec<f64>)> = Vec::new();
        let _ = advance(&sys, x, &opts, timings, |rec, xs| {
            let d = dev_norm(xs);
            if d <= 0.01 * wmax {
                samples.push((rec.t, d.ln(), xs[..nc].to_vec()));
            }
        })
        .expect("march");
        // least-squares slope of ln ||dev|| vs t over the window
        let n = samples.len() as f64;
        let (st, sl): (f64, f64) = samples.iter().fold((0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1));
        let (mt, ml) = (st / n, sl / n);
        let (mut num, mut den) = (0.0, 0.0);
        for (t, l, _) in &samples {
            num += (t - mt) * (l - ml);
            den += (t - mt) * (t - mt);
        }
        // implicit Euler's per-step growth -ln(1 - lam dt)/dt biases the
        // slope by about lam*dt/2, well inside the tolerance
        let slope = num / den;
        let rel = (slope - lam).abs() / lam;
        // projection dominance at the end of the window
        let (_, _, w_end) = samples.last().expect("window not empty");
        let e1: Vec<f64> = pair.w_re.iter().map(|v| v / (enorm * vol)).collect();
        let alpha = project_on_eigenbasis(w_end, &x0[..nc], &[e1], &m).expect("projection")[0];
        let dom = alpha.abs() / (dev_norm(&{
            let mut full = x0.clone();
            full[..nc].copy_from_slice(w_end);
            full
        }) * vol);
        ok &= rel <= tol && dom >= 0.9;
        lines.push(format!(
            "{name}: slope {:.3} vs lambda {:.3} (1/T_diff, {:.0}% off), |alpha1|/||dev|| = {dom:.3}",
            slope * ts,
            lam * ts,
            100.0 * rel
        ));
    }
    led.record(7, ok, lines.join("; "));
}

// ---------------------------------------------------------------- 8
/// The iterative eigensolver agrees with a dense oracle on random
/// sparse operators, and the reduced operator's action matches an
/// independently densified Schur complement.
fn criterion_8(led: &mut Ledger, timings: &mut Timings) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    let mut all_ok = true;
    for case in 0..20 {
        let n = rng.gen_range(40..=300);
        // well-separated diagonal plus weak random sparse coupling keeps
        // the spectrum simple enough for a trustworthy comparison
        let mut b = SparseBuilder::new(n, n);
        for i in 0..n {
            b.add(i, i, -(i as f64) - rng.gen_range(0.0..0.3));
        }
        for _ in 0..4 * n {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            b.add(i, j, rng.gen_range(-0.1..0.1));
        }
        let a = b.finalize();
        let op = MatrixOperator::new(&a);
        let sp = match krylov_schur(&op, 5, 1e-10, 60, 40_000, SEED + case, false, timings) {
            Ok(sp) => sp,
            Err(e) => {
                all_ok = false;
                println!("  case {case}: eigensolver failed: {e:?}");
                continue;
            }
        };
        let (mut dense, _) = dense_eig_small(&a.to_dense()).expect("dense oracle");
        dense.sort_by(|p, q| q.re.partial_cmp(&p.re).unwrap().then(q.im.abs().partial_cmp(&p.im.abs()).unwrap()));
        for (p, d) in sp.pairs.iter().take(5).zip(dense.iter()) {
            let mag = (d.re * d.re + d.im * d.im).sqrt().max(1e-300);
            let err = ((p.value.re - d.re).powi(2) + (p.value.im.abs() - d.im.abs()).powi(2)).sqrt() / mag;
            worst = worst.max(err);
        }
    }
    all_ok &= worst <= 1e-8;

    // densified reduced operator vs an independent dense elimination
    let sc = hrl_box(2e-16, 8, 4);
    let mesh = sc.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc.bc).expect("bc");
    let sys = System::new(&mesh, &part, &sc.params);
    let x0 = diffusive_equilibrium(&sys, timings).expect("equilibrium");
    let lin = linearize_at(&sys, &x0, timings).expect("linearize");
    let jac = jacobian(|xs| fv_residual(xs, None, &mesh, &part, &sc.params), &x0);
    let nc = lin.nc;
    let ntot = jac.nrows();
    let m = mass_matrix(&mesh);
    // dense S = M^-1 (A_wy A_yy^-1 A_yw - A_ww) column by column via
    // Gaussian elimination with partial pivoting, written out here so it
    // shares nothing with the library's LU path
    let a_yy = jac.submatrix(nc..ntot, nc..ntot).to_dense();
    let mut s_err = 0.0f64;
    let s_scale = jac.max_abs() / m.iter().cloned().fold(f64::INFINITY, f64::min);
    for j in 0..nc {
        let mut ej = vec![0.0; nc];
        ej[j] = 1.0;
        let lib_col = lin.apply(&ej);
        // rhs = A_yw e_j
        let mut rhs = vec![0.0; ntot - nc];
        for (r, v) in rhs.iter_mut().enumerate() {
            *v = jac.get(nc + r, j);
        }
        let y = dense_solve(&a_yy, &rhs);
        for i in 0..nc {
            let mut wy = 0.0;
            let (cols, vals) = jac.row(i);
            let mut ww = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if c >= nc {
                    wy += v * y[c - nc];
                } else if c == j {
                    ww = v;
                }
            }
            let exact = (wy - ww) / m[i];
            s_err = s_err.max((lib_col[i] - exact).abs() / s_scale);
        }
    }
    all_ok &= s_err <= 1e-10;
    led.record(
        8,
        all_ok,
        format!("20 random operators, worst eigenvalue error {worst:.1e}; densified reduced operator error {s_err:.1e}"),
    );
}

/// Plain dense Gaussian elimination with partial pivoting (test oracle).
fn dense_solve(a: &DenseMat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[(i, j)];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / d;
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = m[i][n];
        for j in i + 1..n {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    x
}

// ---------------------------------------------------------------- 10
/// Elder salt-lake benchmark: fixed monthly steps to 10 years give a
/// central downwelling plume, mirror symmetry, and Ra near 400.
fn criterion_10(led: &mut Ledger, timings: &mut Timings) {
    let sc = load("elder");
    let ra = sc.rayleigh();
    let mesh = sc.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc.bc).expect("bc");
    let sys = System::new(&mesh, &part, &sc.params);
    let x0 = initial_state(&sys, &sc.run, SEED, timings).expect("initial state");
    let yr = 365.0 * 86400.0;
    let opts = AdvanceOpts {
        t_end: Some(10.0 * yr),
        fixed_dt: Some(yr / 12.0),
        controls: RunControls { max_steps: 200, ..sc.run.clone() },
        ..AdvanceOpts::default()
    };
    let out = advance(&sys, x0, &opts, timings, |_, _| {}).expect("march");
    let lay = Layout::new(&mesh);
    let (nx, ny) = (sc.resolution[0], sc.resolution[1]);
    // mirror symmetry about the vertical midline
    let mut asym = 0.0f64;
    for j in 0..ny {
        for i in 0..nx / 2 {
            let l = out.x[lay.w(0, j * nx + i)];
            let r = out.x[lay.w(0, j * nx + (nx - 1 - i))];
            asym = asym.max((l - r).abs());
        }
    }
    let sym_ok = asym <= 1e-6 * sc.params.omega_max;
    // central downwelling: solute beneath the source center reaches
    // deeper than under the source edge
    let depth_of = |icol: usize| {
        let mut deepest = f64::INFINITY;
        for j in 0..ny {
            if out.x[lay.w(0, j * nx + icol)] > 0.2 * sc.params.omega_max {
                let y = mesh.subs[0].cells[j * nx + icol].centroid[1];
                deepest = deepest.min(y);
            }
        }
        deepest
    };
    let center = depth_of(nx / 2);
    let edge = depth_of(nx / 8);
    let down_ok = center < edge;
    let ra_ok = (ra - 400.0).abs() / 400.0 <= 0.1;
    led.record(
        10,
        sym_ok && down_ok && ra_ok,
        format!("asymmetry {asym:.1e}, plume depth center {center:.0} m vs edge {edge:.0} m, Ra = {ra:.0}"),
    );
}

// ---------------------------------------------------------------- 11
/// Gap-criterion sweep: the leading eigenvalue is monotone in the gap
/// width, overlap area, and matrix permeability, and sign transitions
/// sit within one decade of criterion value 0.1.
fn criterion_11(led: &mut Ledger, timings: &mut Timings) {
    let kms = [1e-17, 1e-16, 3e-16];
    let epss = [0.25, 0.5, 1.0, 2.0];
    let areas = [0.5, 1.0, 2.0, 4.0];
    let mut lam = std::collections::HashMap::new();
    let mut crit = std::collections::HashMap::new();
    for (ik, &km) in kms.iter().enumerate() {
        for (ie, &eps) in epss.iter().enumerate() {
            for (ia, &a) in areas.iter().enumerate() {
                let sc = gap_scenario(km, eps, a);
                let l = leading_eigs(&sc, 1, timings).0[0].re;
                let c = model::gap_criterion(
                    km,
                    sc.params.k_f.unwrap(),
                    sc.params.b.unwrap(),
                    a,
                    6.0 + a / 2.0,
                    eps,
                );
                lam.insert((ik, ie, ia), l);
                crit.insert((ik, ie, ia), c);
            }
        }
    }
    // monotonicity with a small tolerance for eigensolver noise
    let tol = 1e-3;
    let mut mono_ok = true;
    for ik in 0..kms.len() {
        for ia in 0..areas.len() {
            for ie in 1..epss.len() {
                mono_ok &= lam[&(ik, ie, ia)] <= lam[&(ik, ie - 1, ia)] + tol;
            }
        }
        for ie in 0..epss.len() {
            for ia in 1..areas.len() {
                mono_ok &= lam[&(ik, ie, ia)] >= lam[&(ik, ie, ia - 1)] - tol;
            }
        }
    }
    for ie in 0..epss.len() {
        for ia in 0..areas.len() {
            for ik in 1..kms.len() {
                mono_ok &= lam[&(ik, ie, ia)] >= lam[&(ik - 1, ie, ia)] - tol;
            }
        }
    }
    // sign transitions along each eps-line: criterion value at the flip
    let mut flips = Vec::new();
    for ik in 0..kms.len() {
        for ia in 0..areas.len() {
            for ie in 1..epss.len() {
                let (l0, l1) = (lam[&(ik, ie - 1, ia)], lam[&(ik, ie, ia)]);
                if l0 > 0.0 && l1 <= 0.0 {
                    flips.push((crit[&(ik, ie - 1, ia)] * crit[&(ik, ie, ia)]).sqrt());
                }
            }
        }
    }
    let flips_ok = !flips.is_empty()
        && flips.iter().all(|&c| (1e-2..=1.0).contains(&c));
    let frange = flips.iter().fold((f64::INFINITY, 0.0f64), |a, &c| (a.0.min(c), a.1.max(c)));
    led.record(
        11,
        mono_ok && flips_ok,
        format!(
            "monotone: {mono_ok}; {} sign flips at criterion {:.3}..{:.3}",
            flips.len(),
            frange.0,
            frange.1
        ),
    );
}

// ---------------------------------------------------------------- 12
/// 3D square-tube network: instability onset within 5% of the expected
/// aperture, first unstable mode interfracture; at larger aperture
/// intrafracture modes lead with the expected spacing.
fn criterion_12(led: &mut Ledger, timings: &mut Timings) {
    let base = load("case6-3d");
    let with_b = |b: f64| {
        let mut sc = base.clone();
        sc.params.b = Some(b);
        sc.params.k_f = Some(b * b / 12.0);
        for f in &mut sc.fractures {
            f.aperture = b;
            f.perm = b * b / 12.0;
        }
        sc
    };
    let b_star = 1.4e-5;
    let sc_lo = with_b(b_star * 0.95);
    let sc_hi = with_b(b_star * 1.05);
    let (v_lo, _) = leading_eigs(&sc_lo, 1, timings);
    let (v_hi, sp_hi) = leading_eigs(&sc_hi, 1, timings);
    let onset_ok = v_lo[0].re < 0.0 && v_hi[0].re > 0.0;
    // classify the first unstable mode
    let mesh_hi = sc_hi.build_mesh().expect("mesh");
    let part_hi = face_partition(&mesh_hi, &sc_hi.bc).expect("bc");
    let sys_hi = System::new(&mesh_hi, &part_hi, &sc_hi.params);
    let x0_hi = diffusive_equilibrium(&sys_hi, timings).expect("equilibrium");
    let lin_hi = linearize_at(&sys_hi, &x0_hi, timings).expect("linearize");
    let first_class = classify_mode_3d(&mesh_hi, &lin_hi, &sp_hi.pairs[0]);
    let first_inter = matches!(first_class, ModeClass::Interfracture { .. });

    // at b = 1.6e-5 the intrafracture pair leads
    let sc_16 = with_b(1.6e-5);
    let (vals, sp) = leading_eigs(&sc_16, 3, timings);
    let mesh = sc_16.build_mesh().expect("mesh");
    let part = face_partition(&mesh, &sc_16.bc).expect("bc");
    let sys = System::new(&mesh, &part, &sc_16.params);
    let x0 = diffusive_equilibrium(&sys, timings).expect("equilibrium");
    let lin = linearize_at(&sys, &x0, timings).expect("linearize");
    let classes: Vec<ModeClass> = sp
        .pairs
        .iter()
        .take(3)
        .map(|p| classify_mode_3d(&mesh, &lin, p))
        .collect();
    let intra_lead = matches!(classes[0], ModeClass::Intrafracture { .. })
        && matches!(classes[1], ModeClass::Intrafracture { .. })
        && matches!(classes[2], ModeClass::Interfracture { .. });
    let expect = [21.0, 20.1, 17.6];
    let mags_ok = vals
        .iter()
        .zip(expect.iter())
        .all(|(v, e)| (v.re - e).abs() / e <= 0.2);
    led.record(
        12,
        onset_ok && first_inter && intra_lead && mags_ok,
        format!(
            "onset in [{:.2e},{:.2e}]: {onset_ok}; first mode {first_class:?}; at b=1.6e-5 lambda = [{}], classes {:?}",
            b_star * 0.95,
            b_star * 1.05,
            vals.iter().take(3).map(|v| format!("{:.1}", v.re)).collect::<Vec<_>>().join(", "),
            classes
        ),
    );
}

// ---------------------------------------------------------------- 13
/// Cost profile (informational): eigenvalue method vs direct method on
/// sparse-network scenarios, and matvec-count scaling with problem size.
fn criterion_13(led: &mut Ledger, timings: &mut Timings) {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["hrl-a1", "hrl-a2", "hrl-d1", "hrl-d2"] {
        let sc = load(name);
        let t0 = Instant::now();
        let _ = leading_eigs(&sc, sc.eig.k, timings);
        let eig_s = t0.elapsed().as_secs_f64();
        let (_, _, _, _, direct_s) = direct_run(&sc, timings);
        ok &= eig_s <= direct_s;
        lines.push(format!("{name}: eig {eig_s:.1} s vs direct {direct_s:.1} s"));
    }
    // matvec scaling across resolutions
    let mut pts = Vec::new();
    for (nx, ny) in [(20, 10), (40, 20), (80, 40), (160, 80)] {
        let sc = hrl_box(1.2e-16, nx, ny);
        let (_, sp) = leading_eigs(&sc, 4, timings);
        pts.push(((nx * ny) as f64, sp.matvecs as f64));
    }
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0.ln(), a.1 + p.1.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in &pts {
        num += (x.ln() - mx) * (y.ln() - my);
        den += (x.ln() - mx) * (x.ln() - mx);
    }
    let expo = num / den;
    lines.push(format!("matvecs ~ cells^{expo:.2} over 4 resolutions"));
    led.record_soft(13, ok, lines.join("; "));
}

#[test]
fn acceptance() {
    let mut led = Ledger::new();
    let mut timings = Timings::default();
    criterion_1(&mut led, &mut timings);
    criterion_2(&mut led, &mut timings);
    criteria_3_5_9(&mut led, &mut timings);
    criterion_4(&mut led, &mut timings);
    criterion_6(&mut led, &mut timings);
    criterion_7(&mut led, &mut timings);
    criterion_8(&mut led, &mut timings);
    criterion_10(&mut led, &mut timings);
    criterion_11(&mut led, &mut timings);
    criterion_12(&mut led, &mut timings);
    criterion_13(&mut led, &mut timings);
    led.finish();
}
