//! Command-line front end: time-step a scenario (`run`), compute the
//! leading eigenvalues of its linearization (`eig`), sweep the
//! fracture-gap family (`sweep-gap`), inspect the built-in catalog, and
//! compare two run summaries.
//!
//! Exit codes: 0 success, 2 solver failure, 3 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use convecta::io::{read_summary, write_cellfield_vtk, write_flux_vtk, write_state_vtk, Csv, Field, Report};
use convecta::mesh::{face_partition, MixedDimMesh};
use convecta::model::{self, gap_criterion, gap_scenario, peclet, ModelError, Scenario};
use convecta::stability::{
    classify_mode_3d, grid_error, krylov_schur, linearize_at, EigenPair, Linearized, ModeClass,
    Spectrum, StabilityError,
};
use convecta::stepping::{
    advance, advance_to_steady, diffusive_equilibrium, initial_state, AdvanceOpts, StepError,
    StepRecord, System,
};
use convecta::{fv, Timings};

#[derive(Parser)]
#[command(name = "convecta", version, about = "Free convection in fractured porous media")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// RNG seed for perturbations and eigensolver start vectors
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory (default: out/<scenario>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Time-step a scenario (direct method)
    Run {
        /// Catalog name or path to a scenario TOML file
        scenario: String,
        /// "steady" or an end time (seconds; suffixes yr, d, h accepted)
        #[arg(long, default_value = "steady")]
        until: String,
        /// Fixed timestep in seconds (default: adaptive)
        #[arg(long)]
        dt: Option<f64>,
        /// Times at which to write state snapshots, comma-separated seconds
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<f64>,
    },
    /// Leading eigenvalues at the diffusive equilibrium
    Eig {
        /// Catalog name or path to a scenario TOML file
        scenario: String,
        /// Number of eigenvalues
        #[arg(short)]
        k: Option<usize>,
        /// Convergence tolerance
        #[arg(long)]
        tol: Option<f64>,
        /// Re-solve on a 2x coarser grid and report the discretization error
        #[arg(long)]
        grid_check: bool,
    },
    /// Sweep the two-fracture gap family over (k_m, gap width, overlap)
    SweepGap {
        /// Matrix permeabilities [m^2]
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-17, 1e-16, 3e-16])]
        km: Vec<f64>,
        /// Gap widths [m]
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0, 2.0])]
        eps: Vec<f64>,
        /// Overlap lengths [m]
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0])]
        area: Vec<f64>,
    },
    /// List or show the built-in scenarios
    Catalog {
        #[command(subcommand)]
        what: CatalogCmd,
    },
    /// Compare the summary files of two finished runs
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    List,
    Show { name: String },
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        Failure::Config(e.to_string())
    }
}
impl From<convecta::mesh::MeshError> for Failure {
    fn from(e: convecta::mesh::MeshError) -> Failure {
        Failure::Config(e.to_string())
    }
}
impl From<StepError> for Failure {
    fn from(e: StepError) -> Failure {
        Failure::Solver(e.to_string())
    }
}
impl From<StabilityError> for Failure {
    fn from(e: StabilityError) -> Failure {
        Failure::Solver(e.to_string())
    }
}
impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Solver(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match cli.cmd {
        Cmd::Run { ref scenario, ref until, dt, ref snapshots } => {
            load(scenario).and_then(|sc| cmd_run(sc, until, dt, snapshots, &cli))
        }
        Cmd::Eig { ref scenario, k, tol, grid_check } => {
            load(scenario).and_then(|sc| cmd_eig(sc, k, tol, grid_check, &cli))
        }
        Cmd::SweepGap { ref km, ref eps, ref area } => cmd_sweep_gap(km, eps, area, &cli),
        Cmd::Catalog { ref what } => cmd_catalog(what),
        Cmd::Compare { ref run_a, ref run_b } => cmd_compare(run_a, run_b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Honour CONVECTA_THREADS (default 1: fully deterministic).
fn configure_threads() {
    let n: usize = std::env::var("CONVECTA_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    if n <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(n));
    }
}

/// Catalog lookup (case-insensitive) or a TOML file path.
fn load(name: &str) -> Result<Scenario, Failure> {
    let lower = name.to_lowercase();
    if model::catalog_names().contains(&lower.as_str()) {
        return Ok(model::load_scenario(&lower)?);
    }
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {name}: {e}")))?;
        return Ok(Scenario::from_toml(&text)?);
    }
    Err(Failure::Config(format!(
        "unknown scenario '{name}'; available: {}",
        model::catalog_names().join(", ")
    )))
}

fn parse_until(s: &str) -> Result<Option<f64>, Failure> {
    if s == "steady" {
        return Ok(None);
    }
    let (num, scale) = if let Some(v) = s.strip_suffix("yr") {
        (v, 365.0 * 86400.0)
    } else if let Some(v) = s.strip_suffix('d') {
        (v, 86400.0)
    } else if let Some(v) = s.strip_suffix('h') {
        (v, 3600.0)
    } else {
        (s, 1.0)
    };
    num.trim()
        .parse::<f64>()
        .map(|v| Some(v * scale))
        .map_err(|_| Failure::Config(format!("--until must be 'steady' or a time, got '{s}'")))
}

fn out_dir(cli: &Cli, default_name: &str) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(default_name))
}

fn grid_stats(mesh: &MixedDimMesh) -> Vec<(usize, usize)> {
    (0..mesh.subs.len())
        .filter(|&c| !mesh.subs[c].cells.is_empty())
        .map(|c| (mesh.dim - c, mesh.subs[c].cells.len()))
        .collect()
}

fn grid_peclet(sc: &Scenario, mesh: &MixedDimMesh) -> f64 {
    let h = (0..mesh.dim).map(|a| mesh.h[a]).fold(0.0, f64::max);
    peclet(&sc.params, sc.height(), h)
}

const STEP_COLUMNS: [&str; 11] = [
    "step", "t", "dt", "newton_iters", "residual", "sherwood", "w_min", "w_max", "peclet",
    "rate", "mass_error",
];

fn step_row(r: &StepRecord) -> [Field; 11] {
    [
        Field::Int(r.step as i64),
        Field::Num(r.t),
        Field::Num(r.dt),
        Field::Int(r.newton_iters as i64),
        Field::Num(r.residual),
        Field::Num(r.sherwood),
        Field::Num(r.w_min),
        Field::Num(r.w_max),
        Field::Num(r.peclet),
        Field::Num(r.rate),
        Field::Num(r.mass_error),
    ]
}

fn cmd_run(
    sc: Scenario,
    until: &str,
    dt: Option<f64>,
    snapshots: &[f64],
    cli: &Cli,
) -> Result<(), Failure> {
    let t0 = Instant::now();
    let mesh = sc.build_mesh()?;
    let part = face_partition(&mesh, &sc.bc)?;
    let sys = System::new(&mesh, &part, &sc.params);
    let mut timings = Timings::default();
    timings.init = t0.elapsed().as_secs_f64();

    let mut controls = sc.run.clone();
    controls.t_end = parse_until(until)?;
    let x0 = initial_state(&sys, &controls, cli.seed, &mut timings)?;

    let dir = out_dir(cli, &sc.name);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut steps_csv = Csv::create(&dir.join("steps.csv"), &STEP_COLUMNS)?;

    let mut snaps: Vec<f64> = snapshots.to_vec();
    snaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snap_idx = 0;
    let mut snap_log: Vec<(f64, f64)> = Vec::new();
    let mut io_err: Option<std::io::Error> = None;

    let opts = AdvanceOpts {
        t_end: controls.t_end,
        fixed_dt: dt,
        controls: controls.clone(),
        ..AdvanceOpts::default()
    };
    let mut on_step = |rec: &StepRecord, x: &[f64]| {
        if io_err.is_some() {
            return;
        }
        if let Err(e) = steps_csv.row(&step_row(rec)) {
            io_err = Some(e);
            return;
        }
        while snap_idx < snaps.len() && rec.t >= snaps[snap_idx] {
            match write_state_vtk(&dir, &format!("snap{snap_idx}"), &mesh, &sys.lay, x) {
                Ok(mut fs) => files.append(&mut fs),
                Err(e) => {
                    io_err = Some(e);
                    return;
                }
            }
            snap_log.push((snaps[snap_idx], rec.t));
            snap_idx += 1;
        }
    };
    let (outcome, verification) = if controls.t_end.is_none() && dt.is_none() {
        let st = advance_to_steady(
            &sys,
            x0,
            &controls,
            &sc.eig,
            cli.seed,
            &mut timings,
            &mut on_step,
        )?;
        (st.out, Some((st.kicks, st.verified, st.lambda1)))
    } else {
        (advance(&sys, x0, &opts, &mut timings, &mut on_step)?, None)
    };
    if let Some(e) = io_err {
        return Err(e.into());
    }
    files.push(steps_csv.finish()?);

    files.extend(write_state_vtk(&dir, "final", &mesh, &sys.lay, &outcome.x)?);
    let fluid = fv::darcy_flux(&outcome.x, &mesh, &part, &sc.params);
    let solute = fv::transport_flux(&outcome.x, &fluid, &mesh, &part, &sc.params);
    files.extend(write_flux_vtk(&dir, "final", &mesh, &fluid.face, &solute.face)?);

    let sh = sys.sherwood(&outcome.x);
    let mut headline = vec![
        ("Sherwood".to_string(), format!("{sh:.6}")),
        ("end time".to_string(), format!("{:.6e} s ({:.4} T_diff)", outcome.t, outcome.t / sys.t_diff())),
        ("steps".to_string(), outcome.steps.len().to_string()),
        ("steady".to_string(), outcome.steady.to_string()),
        ("overshoot".to_string(), format!("{:.3e}", outcome.max_overshoot)),
    ];
    if let Some((kicks, verified, lam1)) = &verification {
        headline.push(("eig kicks".to_string(), kicks.to_string()));
        headline.push(("stability verified".to_string(), verified.to_string()));
        if let Some(l) = lam1 {
            headline.push(("final lambda1".to_string(), format!("{:.4} + {:.4}i", l.re, l.im)));
        }
    }
    for (i, (target, actual)) in snap_log.iter().enumerate() {
        headline.push((format!("snapshot {i}"), format!("target {target} s, written at {actual} s")));
    }
    let report = Report {
        scenario: sc.name.clone(),
        method: "direct (implicit Euler)".into(),
        cells_per_dim: grid_stats(&mesh),
        rayleigh: sc.rayleigh(),
        peclet: grid_peclet(&sc, &mesh),
        headline,
        summary: vec![
            ("sherwood".into(), sh),
            ("t_end".into(), outcome.t),
            ("steps".into(), outcome.steps.len() as f64),
            ("steady".into(), if outcome.steady { 1.0 } else { 0.0 }),
            ("max_overshoot".into(), outcome.max_overshoot),
            ("eig_kicks".into(), verification.as_ref().map_or(-1.0, |v| v.0 as f64)),
            (
                "stability_verified".into(),
                verification.as_ref().map_or(-1.0, |v| if v.1 { 1.0 } else { 0.0 }),
            ),
            (
                "final_lambda1".into(),
                verification
                    .as_ref()
                    .and_then(|v| v.2.as_ref())
                    .map_or(f64::NAN, |l| l.re),
            ),
        ],
        timings,
        files,
    };
    report.write(&dir)?;
    print!("{}", report.render());
    Ok(())
}

/// Halve every resolution entry for the grid-convergence check.
fn coarsened(sc: &Scenario) -> Result<Scenario, Failure> {
    let mut coarse = sc.clone();
    for a in 0..3 {
        if sc.resolution[a] > 0 {
            if sc.resolution[a] % 2 != 0 || sc.resolution[a] < 4 {
                return Err(Failure::Config(format!(
                    "--grid-check needs even resolutions >= 4, got {}",
                    sc.resolution[a]
                )));
            }
            coarse.resolution[a] = sc.resolution[a] / 2;
        }
    }
    coarse.name = format!("{}-coarse", sc.name);
    Ok(coarse)
}

struct EigRun {
    mesh: MixedDimMesh,
    lin: Linearized,
    spectrum: Spectrum,
    timings: Timings,
    time_scale: f64,
}

fn solve_eig(sc: &Scenario, k: usize, tol: f64, seed: u64) -> Result<EigRun, Failure> {
    let t0 = Instant::now();
    let mesh = sc.build_mesh()?;
    let part = face_partition(&mesh, &sc.bc)?;
    let sys = System::new(&mesh, &part, &sc.params);
    let mut timings = Timings::default();
    timings.init = t0.elapsed().as_secs_f64();
    let x_eq = diffusive_equilibrium(&sys, &mut timings)?;
    let lin = linearize_at(&sys, &x_eq, &mut timings)?;
    let time_scale = lin.time_scale;
    let spectrum = krylov_schur(
        &lin,
        k,
        tol,
        sc.eig.basis,
        sc.eig.max_matvecs,
        seed,
        false,
        &mut timings,
    )?;
    Ok(EigRun { mesh, lin, spectrum, timings, time_scale })
}

fn mode_label(mesh: &MixedDimMesh, lin: &Linearized, pair: &EigenPair) -> String {
    if mesh.dim < 3 {
        return String::new();
    }
    match classify_mode_3d(mesh, lin, pair) {
        ModeClass::Intrafracture { axis, coordinate, share } => {
            let ax = ["x", "y", "z"][axis];
            format!("intrafracture {ax}={coordinate} ({:.0}%)", share * 100.0)
        }
        ModeClass::Interfracture { max_share } => {
            format!("interfracture (max plane {:.0}%)", max_share * 100.0)
        }
    }
}

fn cmd_eig(
    sc: Scenario,
    k: Option<usize>,
    tol: Option<f64>,
    grid_check: bool,
    cli: &Cli,
) -> Result<(), Failure> {
    let k = k.unwrap_or(sc.eig.k);
    let tol = tol.unwrap_or(sc.eig.tol);
    let run = solve_eig(&sc, k, tol, cli.seed)?;

    let fine_vals = run.spectrum.values_nondim(run.time_scale);
    let mut eps_g: Vec<Option<f64>> = vec![None; fine_vals.len()];
    if grid_check {
        let coarse_sc = coarsened(&sc)?;
        let coarse = solve_eig(&coarse_sc, k, tol, cli.seed)?;
        let coarse_vals = coarse.spectrum.values_nondim(coarse.time_scale);
        let n = coarse_vals.len().min(fine_vals.len());
        let eg = grid_error(&coarse_vals[..n], &fine_vals[..n])?;
        for (i, e) in eg.into_iter().enumerate() {
            eps_g[i] = Some(e);
        }
    }

    let dir = out_dir(cli, &sc.name);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let csv_path = dir.join("eigenvalues.csv");
    let mut csv = Csv::create(
        &csv_path,
        &["rank", "lambda_nondim_re", "lambda_nondim_im", "lambda_re_per_s", "residual",
          "grid_error", "converged", "label"],
    )?;
    let mut headline = Vec::new();
    let mut summary = vec![
        ("matvecs".to_string(), run.spectrum.matvecs as f64),
        ("unstable".to_string(),
         if fine_vals.first().map_or(false, |v| v.re > 0.0) { 1.0 } else { 0.0 }),
    ];
    for (i, pair) in run.spectrum.pairs.iter().enumerate() {
        let v = fine_vals[i];
        let label = mode_label(&run.mesh, &run.lin, pair);
        csv.row(&[
            Field::Int(i as i64 + 1),
            Field::Num(v.re),
            Field::Num(v.im),
            Field::Num(pair.value.re),
            Field::Num(pair.residual),
            match eps_g[i] {
                Some(e) => Field::Num(e),
                None => Field::Text(String::new()),
            },
            Field::Text(pair.converged.to_string()),
            Field::Text(label.clone()),
        ])?;
        let im = if v.im != 0.0 { format!(" {:+.6}i", v.im) } else { String::new() };
        let eg = eps_g[i].map_or(String::new(), |e| format!(", eps_g {e:.2e}"));
        let lbl = if label.is_empty() { String::new() } else { format!(" [{label}]") };
        headline.push((
            format!("lambda_{}", i + 1),
            format!("{:.6}{im} (residual {:.2e}{eg}){lbl}", v.re, pair.residual),
        ));
        summary.push((format!("lambda{}_nondim", i + 1), v.re));
        files.extend(write_cellfield_vtk(
            &dir,
            &format!("mode{}", i + 1),
            "w",
            &run.mesh,
            &pair.w_re,
        )?);
        if v.im != 0.0 {
            files.extend(write_cellfield_vtk(
                &dir,
                &format!("mode{}-im", i + 1),
                "w",
                &run.mesh,
                &pair.w_im,
            )?);
        }
    }
    files.push(csv.finish()?);

    let report = Report {
        scenario: sc.name.clone(),
        method: format!("eigenvalue (Krylov-Schur, k={k}, tol={tol:e})"),
        cells_per_dim: grid_stats(&run.mesh),
        rayleigh: sc.rayleigh(),
        peclet: grid_peclet(&sc, &run.mesh),
        headline,
        summary,
        timings: run.timings,
        files,
    };
    report.write(&dir)?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_sweep_gap(km: &[f64], eps: &[f64], area: &[f64], cli: &Cli) -> Result<(), Failure> {
    let dir = out_dir(cli, "sweep-gap");
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("sweep.csv");
    let mut csv = Csv::create(
        &csv_path,
        &["km", "eps", "area", "gap_criterion", "lambda1_nondim", "unstable"],
    )?;
    let mut timings = Timings::default();
    let total = km.len() * eps.len() * area.len();
    let mut done = 0;
    for &k_m in km {
        for &e in eps {
            for &a in area {
                let sc = gap_scenario(k_m, e, a);
                let run = solve_eig(&sc, sc.eig.k, sc.eig.tol, cli.seed)?;
                let vals = run.spectrum.values_nondim(run.time_scale);
                let l1 = vals.first().map_or(f64::NAN, |v| v.re);
                // dx is the length of each top fracture segment feeding the gap
                let crit = gap_criterion(
                    k_m,
                    sc.params.k_f.unwrap(),
                    sc.params.b.unwrap(),
                    a,
                    6.0 + a / 2.0,
                    e,
                );
                csv.row(&[
                    Field::Num(k_m),
                    Field::Num(e),
                    Field::Num(a),
                    Field::Num(crit),
                    Field::Num(l1),
                    Field::Int(if l1 > 0.0 { 1 } else { 0 }),
                ])?;
                let t = run.timings;
                timings.init += t.init;
                timings.assembly += t.assembly;
                timings.linsolve += t.linsolve;
                timings.lu += t.lu;
                timings.matvec += t.matvec;
                timings.ortho += t.ortho;
                done += 1;
                eprintln!(
                    "[{done}/{total}] km={k_m:e} eps={e} area={a}: criterion {crit:.3e}, lambda1 {l1:.4}"
                );
            }
        }
    }
    let path = csv.finish()?;
    println!("wrote {}", path.display());
    let _ = timings;
    Ok(())
}

fn cmd_catalog(what: &CatalogCmd) -> Result<(), Failure> {
    match what {
        CatalogCmd::List => {
            for name in model::catalog_names() {
                let sc = model::load_scenario(name)?;
                println!("{name:<12} {}", sc.description);
            }
            Ok(())
        }
        CatalogCmd::Show { name } => {
            let toml = model::catalog_toml(&name.to_lowercase())?;
            print!("{toml}");
            Ok(())
        }
    }
}

fn cmd_compare(run_a: &Path, run_b: &Path) -> Result<(), Failure> {
    let read = |dir: &Path| -> Result<Vec<(String, String)>, Failure> {
        let p = dir.join("summary.csv");
        read_summary(&p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))
    };
    let a = read(run_a)?;
    let b = read(run_b)?;
    println!("{:<24} {:>24} {:>24} {:>12}", "key", "A", "B", "rel diff");
    for (key, va) in &a {
        if let Some((_, vb)) = b.iter().find(|(k, _)| k == key) {
            let rel = match (va.parse::<f64>(), vb.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    let denom = x.abs().max(y.abs());
                    if denom == 0.0 {
                        "0".to_string()
                    } else {
                        format!("{:.3e}", (x - y).abs() / denom)
                    }
                }
                _ => String::new(),
            };
            println!("{key:<24} {va:>24} {vb:>24} {rel:>12}");
        } else {
            println!("{key:<24} {va:>24} {:>24}", "(missing)");
        }
    }
    for (key, vb) in &b {
        if !a.iter().any(|(k, _)| k == key) {
            println!("{key:<24} {:>24} {vb:>24}", "(missing)");
        }
    }
    Ok(())
}
