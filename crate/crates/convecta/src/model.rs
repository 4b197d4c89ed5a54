//! Scenario definition (geometry, material parameters, boundary
//! conditions, run controls) plus the physical diagnostics: Rayleigh,
//! Peclet and Sherwood numbers, the gap criterion and projections onto
//! an eigenbasis.

use crate::mesh::{self, BcRule, BcSpec, Fracture, MixedDimMesh};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
}

/// Bulk/fluid material parameters. Fracture permeability and aperture
/// live on each fracture; the optional defaults here apply to fractures
/// that do not specify their own.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    /// bulk permeability [m^2]
    pub k: f64,
    /// porosity
    pub phi: f64,
    /// dynamic viscosity [kg/m/s]
    pub mu: f64,
    /// reference density [kg/m^3]
    pub rho0: f64,
    /// solutal expansion coefficient
    pub alpha: f64,
    /// top-boundary mass fraction
    pub omega_max: f64,
    /// gravity [m/s^2]
    pub g: f64,
    /// effective diffusivity [m^2/s]
    pub diffusivity: f64,
    /// default fracture permeability [m^2]
    #[serde(default)]
    pub k_f: Option<f64>,
    /// default fracture aperture [m]
    #[serde(default)]
    pub b: Option<f64>,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = [
            ("k", self.k),
            ("phi", self.phi),
            ("mu", self.mu),
            ("rho0", self.rho0),
            ("omega_max", self.omega_max),
            ("g", self.g),
            ("diffusivity", self.diffusivity),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(ModelError::Parse(format!("{name} must be positive, got {v}")));
            }
        }
        if self.alpha < 0.0 {
            return Err(ModelError::Parse("alpha must be nonnegative".into()));
        }
        if self.omega_max > 1.0 {
            return Err(ModelError::Parse("omega_max must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// diffusive timescale H^2/D
    pub fn t_diff(&self, h: f64) -> f64 {
        h * h / self.diffusivity
    }
}

/// Ra = v_g / v_d = (k/(phi mu)) rho0 alpha omega_max g / (D/H)
pub fn rayleigh(p: &MaterialParams, height: f64) -> f64 {
    (p.k / (p.phi * p.mu)) * p.rho0 * p.alpha * p.omega_max * p.g / (p.diffusivity / height)
}

/// grid Peclet number Ra * h / H
pub fn peclet(p: &MaterialParams, height: f64, h: f64) -> f64 {
    rayleigh(p, height) * h / height
}

/// (k_m A)/(k_f b) * (dx/eps): dimensionless predictor for whether a
/// matrix gap of width eps between fracture segments overlapping over a
/// length A suppresses the through-circuit convection.
pub fn gap_criterion(k_m: f64, k_f: f64, b: f64, a: f64, dx: f64, eps: f64) -> f64 {
    (k_m * a) / (k_f * b) * (dx / eps)
}

/// alpha_i = <w - w0, e_i>_M for M-normalized eigenvectors e_i.
pub fn project_on_eigenbasis(
    w: &[f64],
    baseline: &[f64],
    eigvecs: &[Vec<f64>],
    m_diag: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if w.len() != baseline.len() || w.len() != m_diag.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "state {} vs baseline {} vs mass {}",
            w.len(),
            baseline.len(),
            m_diag.len()
        )));
    }
    let mut out = Vec::with_capacity(eigvecs.len());
    for e in eigvecs {
        if e.len() != w.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "eigvec {} vs state {}",
                e.len(),
                w.len()
            )));
        }
        let a: f64 = (0..w.len())
            .map(|i| (w[i] - baseline[i]) * e[i] * m_diag[i])
            .sum();
        out.push(a);
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// scenario files

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    ZeroSolute,
    DiffusiveSteady,
    Perturbed,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Perturbed
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunControls {
    /// initial timestep as a fraction of T_diff
    pub dt0_rel: f64,
    /// end time in seconds; absent = run to steady state
    pub t_end: Option<f64>,
    pub newton_tol: f64,
    /// perturbation amplitude relative to omega_max
    pub perturbation: f64,
    pub init: InitialCondition,
    pub max_steps: usize,
}

impl Default for RunControls {
    fn default() -> Self {
        RunControls {
            dt0_rel: 1e-4,
            t_end: None,
            newton_tol: 1e-8,
            perturbation: 1e-3,
            init: InitialCondition::Perturbed,
            max_steps: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EigControls {
    pub k: usize,
    pub tol: f64,
    /// Krylov basis size; 0 = automatic max(40, 4k)
    pub basis: usize,
    pub max_matvecs: usize,
}

impl Default for EigControls {
    fn default() -> Self {
        EigControls {
            k: 8,
            tol: 1e-6,
            basis: 0,
            max_matvecs: 20_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
struct DomainSection {
    extents: Vec<f64>,
    resolution: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
struct FractureSection {
    lo: Vec<f64>,
    hi: Vec<f64>,
    aperture: Option<f64>,
    perm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
struct BcSection {
    /// "hrl" (closed box, solute-on-top) or "elder" (salt lake strip)
    preset: Option<String>,
    flow: Vec<BcRule>,
    transport: Vec<BcRule>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    /// geometry read off a figure rather than printed coordinates
    #[serde(default)]
    approximate_geometry: bool,
    domain: DomainSection,
    #[serde(default)]
    fractures: Vec<FractureSection>,
    params: MaterialParams,
    #[serde(default)]
    bc: BcSection,
    #[serde(default)]
    run: RunControls,
    #[serde(default)]
    eig: EigControls,
}

/// A fully resolved scenario: everything needed to mesh and run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub approximate_geometry: bool,
    pub extents: [f64; 3],
    pub resolution: [usize; 3],
    pub fractures: Vec<Fracture>,
    pub params: MaterialParams,
    pub bc: BcSpec,
    pub run: RunControls,
    pub eig: EigControls,
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Scenario, ModelError> {
        let file: ScenarioFile =
            toml::from_str(src).map_err(|e| ModelError::Parse(e.to_string()))?;
        file.resolve()
    }

    pub fn dim(&self) -> usize {
        if self.resolution[2] == 0 {
            2
        } else {
            3
        }
    }

    /// domain height (extent along the gravity axis)
    pub fn height(&self) -> f64 {
        self.extents[self.dim() - 1]
    }

    pub fn build_mesh(&self) -> Result<MixedDimMesh, ModelError> {
        Ok(mesh::build_cartesian_mdg(
            self.extents,
            self.resolution,
            &self.fractures,
            self.params.k,
        )?)
    }

    pub fn rayleigh(&self) -> f64 {
        rayleigh(&self.params, self.height())
    }
}

impl ScenarioFile {
    fn resolve(self) -> Result<Scenario, ModelError> {
        let dim = self.domain.extents.len();
        if !(dim == 2 || dim == 3) || self.domain.resolution.len() != dim {
            return Err(ModelError::Parse(
                "domain.extents and domain.resolution must both have 2 or 3 entries".into(),
            ));
        }
        self.params.validate()?;
        let mut extents = [0.0; 3];
        let mut resolution = [0usize; 3];
        for a in 0..dim {
            extents[a] = self.domain.extents[a];
            resolution[a] = self.domain.resolution[a];
        }
        let mut fractures = Vec::with_capacity(self.fractures.len());
        for (i, f) in self.fractures.iter().enumerate() {
            if f.lo.len() != dim || f.hi.len() != dim {
                return Err(ModelError::Parse(format!(
                    "fracture {i}: lo/hi must have {dim} entries"
                )));
            }
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for a in 0..dim {
                lo[a] = f.lo[a];
                hi[a] = f.hi[a];
            }
            let aperture = f
                .aperture
                .or(self.params.b)
                .ok_or_else(|| ModelError::Parse(format!("fracture {i}: no aperture given")))?;
            let perm = f
                .perm
                .or(self.params.k_f)
                .ok_or_else(|| ModelError::Parse(format!("fracture {i}: no permeability given")))?;
            fractures.push(Fracture { lo, hi, aperture, perm });
        }
        let bc = match self.bc.preset.as_deref() {
            Some("hrl") => hrl_bc(self.params.omega_max),
            Some("elder") => elder_bc(extents, self.params.omega_max),
            Some(other) => {
                return Err(ModelError::Parse(format!("unknown bc preset '{other}'")))
            }
            None => BcSpec {
                flow: self.bc.flow,
                transport: self.bc.transport,
            },
        };
        Ok(Scenario {
            name: self.name,
            description: self.description,
            approximate_geometry: self.approximate_geometry,
            extents,
            resolution,
            fractures,
            params: self.params,
            bc,
            run: self.run,
            eig: self.eig,
        })
    }
}

/// Closed box: no flow all around; solute held at omega_max on top and
/// zero on the bottom, insulated sides.
pub fn hrl_bc(omega_max: f64) -> BcSpec {
    use mesh::{Bc, Side};
    let all = [Side::XMin, Side::XMax, Side::YMin, Side::YMax, Side::ZMin, Side::ZMax];
    BcSpec {
        flow: all
            .iter()
            .map(|&side| BcRule { side, range: None, bc: Bc::Neumann(0.0) })
            .collect(),
        transport: vec![
            BcRule { side: Side::YMax, range: None, bc: Bc::Dirichlet(omega_max) },
            BcRule { side: Side::ZMax, range: None, bc: Bc::Dirichlet(omega_max) },
            BcRule { side: Side::YMin, range: None, bc: Bc::Dirichlet(0.0) },
            BcRule { side: Side::ZMin, range: None, bc: Bc::Dirichlet(0.0) },
            BcRule { side: Side::XMin, range: None, bc: Bc::Neumann(0.0) },
            BcRule { side: Side::XMax, range: None, bc: Bc::Neumann(0.0) },
        ],
    }
}

/// Two-fracture circuit with a matrix gap: a closed rectangular fracture
/// loop drives convection, interrupted near the top by offsetting the
/// two halves of the upper member by `eps` with an overlap of length
/// `area`, so the circuit only conducts through the matrix slab between
/// them.
pub fn gap_scenario(km: f64, eps: f64, area: f64) -> Scenario {
    let b = 4.65e-5;
    let kf = b * b / 12.0;
    let frac = |lo: [f64; 3], hi: [f64; 3]| Fracture { lo, hi, aperture: b, perm: kf };
    Scenario {
        name: format!("gap-km{km:e}-eps{eps}-a{area}"),
        description: "two-segment gap circuit".into(),
        approximate_geometry: false,
        extents: [20.0, 10.0, 0.0],
        resolution: [80, 40, 0],
        fractures: vec![
            // upper member, split with a vertical offset of eps
            frac([4.0, 8.0, 0.0], [10.0 + area / 2.0, 8.0, 0.0]),
            frac([10.0 - area / 2.0, 8.0 - eps, 0.0], [16.0, 8.0 - eps, 0.0]),
            // lower member and the two risers
            frac([4.0, 2.0, 0.0], [16.0, 2.0, 0.0]),
            frac([4.0, 2.0, 0.0], [4.0, 8.0, 0.0]),
            frac([16.0, 2.0, 0.0], [16.0, 8.0 - eps, 0.0]),
        ],
        params: MaterialParams {
            k: km,
            phi: 0.1,
            mu: 1.1e-3,
            rho0: 1000.0,
            alpha: 0.7,
            omega_max: 0.1,
            g: 9.81,
            diffusivity: 1e-9,
            k_f: Some(kf),
            b: Some(b),
        },
        bc: hrl_bc(0.1),
        run: RunControls::default(),
        eig: EigControls { k: 3, ..EigControls::default() },
    }
}

/// Elder problem: closed box for flow; solute source on the central half
/// of the top boundary, fresh water at the bottom.
pub fn elder_bc(extents: [f64; 3], omega_max: f64) -> BcSpec {
    use mesh::{Bc, Side};
    let lx = extents[0];
    BcSpec {
        flow: [Side::XMin, Side::XMax, Side::YMin, Side::YMax]
            .iter()
            .map(|&side| BcRule { side, range: None, bc: Bc::Neumann(0.0) })
            .collect(),
        transport: vec![
            BcRule {
                side: Side::YMax,
                range: Some([[0.25 * lx, 0.75 * lx], [0.0, 0.0]]),
                bc: Bc::Dirichlet(omega_max),
            },
            BcRule { side: Side::YMax, range: None, bc: Bc::Neumann(0.0) },
            BcRule { side: Side::YMin, range: None, bc: Bc::Dirichlet(0.0) },
            BcRule { side: Side::XMin, range: None, bc: Bc::Neumann(0.0) },
            BcRule { side: Side::XMax, range: None, bc: Bc::Neumann(0.0) },
        ],
    }
}

// ---------------------------------------------------------------------
// catalog

/// Built-in scenarios, embedded at compile time.
pub fn catalog_names() -> Vec<&'static str> {
    CATALOG.iter().map(|(n, _)| *n).collect()
}

pub fn catalog_toml(name: &str) -> Result<&'static str, ModelError> {
    CATALOG
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| ModelError::UnknownScenario(name.into()))
}

pub fn load_scenario(name: &str) -> Result<Scenario, ModelError> {
    Scenario::from_toml(catalog_toml(name)?)
}

macro_rules! catalog {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

static CATALOG: &[(&str, &str)] = catalog![
    "elder",
    "hrl-a1",
    "hrl-a2",
    "hrl-d1",
    "hrl-d2",
    "hrl-d2star",
    "hrl-d11",
    "hrl-e9b",
    "case6-3d",
];
