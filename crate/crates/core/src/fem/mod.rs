pub mod assembly;
pub mod field;
pub mod neumann;
pub mod system;

pub use assembly::{assemble_boundary_mass, assemble_stiffness, BoundaryMass, Stiffness};
pub use field::Field;
pub use neumann::{project_mean_free, solve_load, solve_load_scaled, solve_neumann, NeumannOptions};
pub use system::Condensed;

use crate::error::Result;
use crate::geometry::{Mesh, WeightField};

/// A mesh, a weight, and the assembled and condensed linear operators.
pub struct FemProblem {
    pub mesh: Mesh,
    pub a: WeightField,
    pub k: Stiffness,
    pub mass: BoundaryMass,
    pub sys: Condensed,
}

impl FemProblem {
    pub fn new(mesh: Mesh, a: WeightField) -> Result<Self> {
        let k = assemble_stiffness(&mesh, &a)?;
        let mass = assemble_boundary_mass(&mesh, &a);
        let sys = Condensed::new(&mesh, &k, &mass)?;
        Ok(FemProblem { mesh, a, k, mass, sys })
    }

    pub fn nb(&self) -> usize {
        self.mesh.n_boundary
    }

    /// Boundary values of `a`.
    pub fn a_boundary(&self) -> Vec<f64> {
        self.mesh.boundary_points().iter().map(|&p| self.a.value(p)).collect()
    }
}
