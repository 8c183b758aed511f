//! Compliant-constraint cloth simulation.
//!
//! Each triangle carries a three-row Green strain constraint with an
//! orthotropic StVK stiffness block, and each interior edge carries a scalar
//! dihedral-angle constraint. Local systems are solved block-wise in a fixed
//! order: all triangles by index, then all hinges.

pub mod constraints;
mod forces;
mod solver;

use serde::{Deserialize, Serialize};

pub use constraints::{bending_constraint, dihedral_angle, green_strain};
pub(crate) use forces::boundary_force_sensitivities;
pub use forces::{boundary_forces, vertex_constraint_forces};
pub use solver::{quasi_static_solve, xpbd_step, QuasiStaticResult, StepDiagnostics};
pub(crate) use solver::{run_quasi_static, step_impl};

use crate::error::{Error, Result};
use crate::material::MaterialParams;
use crate::math::Vec3;
use crate::mesh::{rest_basis, GridMesh, Mat2};

/// Standard gravity, cm/s².
pub const GRAVITY: f64 = 981.0;

#[derive(Clone, Debug)]
pub struct TriangleElement {
    pub vertices: [usize; 3],
    pub rest_basis: Mat2,
    pub weights: [[f64; 2]; 3],
    /// Rest area, cm².
    pub area: f64,
}

#[derive(Clone, Debug)]
pub struct HingeElement {
    pub vertices: [usize; 4],
    /// Rest dihedral angle, radians.
    pub rest_angle: f64,
}

/// Precomputed rest data for every constraint, paired with the material.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub triangles: Vec<TriangleElement>,
    pub hinges: Vec<HingeElement>,
    pub material: MaterialParams,
}

impl ConstraintSet {
    pub fn new(mesh: &GridMesh, material: MaterialParams) -> Result<Self> {
        material.validate()?;
        let triangles = mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(t, &vertices)| {
                let basis = rest_basis(mesh, t)?;
                Ok(TriangleElement {
                    vertices,
                    rest_basis: basis,
                    weights: constraints::shape_weights(&basis),
                    area: mesh.rest_area(t),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let rest: Vec<Vec3> = mesh.rest_uv.iter().map(|uv| [uv[0], uv[1], 0.0]).collect();
        let hinges = mesh
            .hinges
            .iter()
            .map(|&vertices| {
                let x = vertices.map(|v| rest[v]);
                let rest_angle = dihedral_angle(&x)
                    .ok_or_else(|| Error::DegenerateHinge(format!("rest hinge {vertices:?} has a collapsed wing")))?;
                Ok(HingeElement { vertices, rest_angle })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self { triangles, hinges, material })
    }

    pub fn with_material(&self, material: MaterialParams) -> Self {
        Self { triangles: self.triangles.clone(), hinges: self.hinges.clone(), material }
    }

    /// Number of multiplier rows: three per triangle, one per hinge.
    pub fn row_count(&self) -> usize {
        3 * self.triangles.len() + self.hinges.len()
    }

    #[inline]
    pub fn hinge_row(&self, h: usize) -> usize {
        3 * self.triangles.len() + h
    }

    /// Inverse compliance block `A · [[c00, c01, 0], [c01, c11, 0], [0, 0, c22]]`.
    pub fn triangle_stiffness(&self, t: usize) -> [[f64; 3]; 3] {
        let a = self.triangles[t].area;
        self.material.stiffness_block().map(|row| row.map(|v| a * v))
    }
}

/// Prescribed positions, external loads, and force-measurement groups.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Vertices held at fixed positions.
    pub pinned: Vec<(usize, Vec3)>,
    /// Constant external forces, dyn.
    pub loads: Vec<(usize, Vec3)>,
    /// Body acceleration, cm/s².
    pub gravity: Vec3,
    /// Vertex groups whose net constraint force is reported.
    pub attachments: Vec<Attachment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub vertices: Vec<usize>,
}

impl BoundaryConditions {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        let refs = self
            .pinned
            .iter()
            .map(|p| p.0)
            .chain(self.loads.iter().map(|l| l.0))
            .chain(self.attachments.iter().flat_map(|a| a.vertices.iter().copied()));
        for v in refs {
            if v >= vertex_count {
                return Err(Error::InvalidArgument(format!(
                    "boundary condition references vertex {v}, mesh has {vertex_count}"
                )));
            }
        }
        Ok(())
    }

    pub fn attachment_sets(&self) -> Vec<Vec<usize>> {
        self.attachments.iter().map(|a| a.vertices.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    GaussSeidel,
    /// Simultaneous local solves, averaged per vertex.
    Jacobi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Time step, s.
    pub dt: f64,
    /// Constraint sweeps per step.
    pub iterations: usize,
    pub max_steps: usize,
    /// Early-exit threshold on the largest per-step vertex displacement, cm.
    /// Zero runs exactly `max_steps` steps.
    pub pos_tol: f64,
    pub mode: SweepMode,
    /// Over-relaxation factor for Jacobi sweeps.
    pub jacobi_omega: f64,
    /// Include constraint second derivatives in the sensitivities.
    pub hessian_terms: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt: 0.01,
            iterations: 20,
            max_steps: 500,
            pos_tol: 1e-5,
            mode: SweepMode::GaussSeidel,
            jacobi_omega: 1.0,
            hessian_terms: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if !(self.pos_tol >= 0.0) {
            return Err(Error::InvalidArgument("pos_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Dynamic state of one swatch.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub lambdas: Vec<f64>,
    pub masses: Vec<f64>,
    pub pinned: Vec<bool>,
    pub external_force: Vec<Vec3>,
}

impl SimState {
    /// Starts from `mesh.positions` at rest velocity; pinned vertices are
    /// moved onto their prescribed positions.
    pub fn new(mesh: &GridMesh, constraints: &ConstraintSet, bc: &BoundaryConditions) -> Result<Self> {
        let n = mesh.vertex_count();
        bc.validate(n)?;
        let mut positions = mesh.positions.clone();
        let mut pinned = vec![false; n];
        for &(v, p) in &bc.pinned {
            pinned[v] = true;
            positions[v] = p;
        }
        let mut external_force = vec![[0.0; 3]; n];
        for &(v, f) in &bc.loads {
            for c in 0..3 {
                external_force[v][c] += f[c];
            }
        }
        Ok(Self {
            positions,
            velocities: vec![[0.0; 3]; n],
            lambdas: vec![0.0; constraints.row_count()],
            masses: mesh.lumped_masses(constraints.material.rho),
            pinned,
            external_force,
        })
    }

    #[inline]
    pub fn inverse_mass(&self, v: usize) -> f64 {
        if self.pinned[v] || self.masses[v] <= 0.0 {
            0.0
        } else {
            1.0 / self.masses[v]
        }
    }
}
