//! Density-driven Darcy flow in fractured porous media.
//!
//! Two complementary ways of assessing free convection are implemented:
//! the *direct method* (implicit Euler time stepping of the nonlinear
//! finite-volume system until steady state, convection detected through
//! the Sherwood number) and the *eigenvalue method* (linearization of the
//! discrete system around a diffusive equilibrium, block elimination and
//! computation of the leading eigenvalues of the reduced operator by a
//! Krylov-Schur iteration in the mass-matrix inner product).

pub mod autodiff;
pub mod fv;
pub mod io;
pub mod mesh;
pub mod model;
pub mod sparse;
pub mod stability;
pub mod stepping;

/// Wall-clock time spent in the major phases of a run, in seconds.
#[derive(Clone, Copy, Debug, Default)]
pub struct Timings {
    pub init: f64,
    pub assembly: f64,
    pub linsolve: f64,
    pub lu: f64,
    pub matvec: f64,
    pub ortho: f64,
}

impl Timings {
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("init", self.init),
            ("assembly", self.assembly),
            ("linsolve", self.linsolve),
            ("lu", self.lu),
            ("matvec", self.matvec),
            ("ortho", self.ortho),
        ]
    }
}
