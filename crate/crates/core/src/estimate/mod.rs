//! Residual assembly and material estimation.
//!
//! Each scenario contributes its descriptor difference and, when force
//! targets are present, weighted clamp-force differences. A final row carries
//! the Poisson penalty √(s_ν·max(0, ν − 0.5)).

mod drivers;
mod lm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use drivers::{alternating_passes, lm_solve, multi_start, start_points, EstimationResult, StartHistory};
pub use lm::{levenberg_marquardt, LeastSquaresModel, LmOutcome, LmSettings, StopReason};

use crate::descriptor::{evaluate, DescriptorKind, Linearization};
use crate::error::{Error, Result};
use crate::material::{poisson_penalty, MaterialParams, DEFAULT_POISSON_WEIGHT, PARAM_COUNT as P, PARAM_NAMES};
use crate::mesh::GridMesh;
use crate::scenario::{build_scenario, TargetBundle};
use crate::sensitivity::SensitivityState;
use crate::xpbd::{
    boundary_force_sensitivities, boundary_forces, run_quasi_static, BoundaryConditions, ConstraintSet, SimState,
    SolverSettings,
};

/// The box Γ, in γ order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; P],
    pub hi: [f64; P],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lo: [1e2, 1e2, 0.0, 1e2, 1e-3], hi: [1e8, 1e8, 1e8, 1e8, 1e4] }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..P {
            if !(self.lo[k] < self.hi[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bounds for {} must satisfy lo < hi, got [{}, {}]",
                    PARAM_NAMES[k], self.lo[k], self.hi[k]
                )));
            }
            if k != 2 && !(self.lo[k] > 0.0) {
                return Err(Error::InvalidArgument(format!("lower bound for {} must be positive", PARAM_NAMES[k])));
            }
        }
        Ok(())
    }

    pub fn contains(&self, gamma: &[f64; P]) -> bool {
        (0..P).all(|k| self.lo[k] <= gamma[k] && gamma[k] <= self.hi[k])
    }
}

/// One experiment with its target shape and clamp forces.
#[derive(Clone, Debug)]
pub struct ScenarioTarget {
    pub name: String,
    /// Grid at the target positions; the residual simulation starts here.
    pub mesh: GridMesh,
    pub bc: BoundaryConditions,
    /// dyn, one per attachment; empty for shape-only targets.
    pub target_forces: Vec<f64>,
    pub descriptor: DescriptorKind,
    /// Multiplier on the force rows; `None` is balanced at the start point.
    pub force_weight: Option<f64>,
    /// Overrides the problem's simulation settings for this scenario.
    pub settings: Option<SolverSettings>,
    constraints: ConstraintSet,
}

impl ScenarioTarget {
    pub fn new(
        name: impl Into<String>,
        mesh: GridMesh,
        bc: BoundaryConditions,
        target_forces: Vec<f64>,
        descriptor: DescriptorKind,
    ) -> Result<Self> {
        bc.validate(mesh.vertex_count())?;
        if !target_forces.is_empty() && target_forces.len() != bc.attachments.len() {
            return Err(Error::InvalidArgument(format!(
                "{} force targets for {} attachments",
                target_forces.len(),
                bc.attachments.len()
            )));
        }
        // material is a placeholder; every evaluation swaps in γ
        let constraints = ConstraintSet::new(&mesh, MaterialParams::cotton())?;
        Ok(Self {
            name: name.into(),
            mesh,
            bc,
            target_forces,
            descriptor,
            force_weight: None,
            settings: None,
            constraints,
        })
    }

    pub fn from_bundle(bundle: &TargetBundle, descriptor: DescriptorKind) -> Result<Self> {
        let scenario = build_scenario(&bundle.spec)?;
        Self::new(bundle.spec.name.clone(), bundle.mesh()?, scenario.bc, bundle.forces.clone(), descriptor)
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = Some(settings);
        self
    }

    pub fn without_forces(mut self) -> Self {
        self.target_forces.clear();
        self
    }

    fn rows(&self) -> usize {
        let d = match self.descriptor {
            DescriptorKind::Pos | DescriptorKind::Fft => 3 * self.mesh.vertex_count(),
            DescriptorKind::Strain => self.constraints.row_count(),
            DescriptorKind::Energy => self.constraints.triangles.len() + self.constraints.hinges.len(),
        };
        d + self.target_forces.len()
    }

    /// Descriptor block, force block (unweighted), and optional Jacobians.
    fn evaluate(&self, gamma: &MaterialParams, settings: &SolverSettings, jacobian: bool) -> Result<ScenarioRows> {
        let settings = self.settings.as_ref().unwrap_or(settings);
        let cs = self.constraints.with_material(*gamma);
        let (n_u, n_v) = (self.mesh.n_u, self.mesh.n_v);
        let state = SimState::new(&self.mesh, &cs, &self.bc)?;
        let mut sens = jacobian.then(|| SensitivityState::for_state(&state));
        let result = run_quasi_static(state, sens.as_mut(), &cs, self.bc.gravity, settings)?;
        let sim = &result.state;

        let target = evaluate(self.descriptor, &self.mesh.positions, &cs, n_u, n_v)?;
        let simulated = evaluate(self.descriptor, &sim.positions, &cs, n_u, n_v)?;
        let desc: Vec<f64> = simulated.values.iter().zip(&target.values).map(|(a, b)| a - b).collect();

        let sets = self.bc.attachment_sets();
        let mut out = ScenarioRows { desc, force: Vec::new(), desc_jac: Vec::new(), force_jac: Vec::new() };
        match sens {
            None => {
                if !self.target_forces.is_empty() {
                    let f = boundary_forces(sim, &cs, settings.dt, &sets)?;
                    out.force = f.iter().zip(&self.target_forces).map(|(a, b)| a - b).collect();
                }
            }
            Some(sens) => {
                let lin = Linearization::new(self.descriptor, &sim.positions, &cs, n_u, n_v)?;
                let mut cols = Vec::with_capacity(P);
                for k in 0..P {
                    let mut col = lin.jvp(&sens.position_column(k))?;
                    if self.descriptor.depends_on_material() {
                        let target_lin = Linearization::new(self.descriptor, &self.mesh.positions, &cs, n_u, n_v)?;
                        for ((c, a), b) in
                            col.iter_mut().zip(lin.material_derivative(k)).zip(target_lin.material_derivative(k))
                        {
                            *c += a - b;
                        }
                    }
                    cols.push(col);
                }
                out.desc_jac = (0..out.desc.len()).map(|i| std::array::from_fn(|k| cols[k][i])).collect();
                if !self.target_forces.is_empty() {
                    let f = boundary_force_sensitivities(sim, &sens, &cs, settings.dt, &sets)?;
                    out.force = f.iter().zip(&self.target_forces).map(|((a, _), b)| a - b).collect();
                    out.force_jac = f.iter().map(|(_, g)| *g).collect();
                }
            }
        }
        Ok(out)
    }
}

struct ScenarioRows {
    desc: Vec<f64>,
    force: Vec<f64>,
    desc_jac: Vec<[f64; P]>,
    force_jac: Vec<[f64; P]>,
}

/// Stacked residual over all scenarios plus the Poisson penalty row.
#[derive(Clone, Debug)]
pub struct EstimationProblem {
    pub scenarios: Vec<ScenarioTarget>,
    /// Area density shared by all scenarios, g/cm².
    pub rho: f64,
    pub bounds: Bounds,
    pub s_nu: f64,
    /// Simulation used inside the residual; `pos_tol = 0` keeps the step
    /// count fixed so the residual is smooth in γ.
    pub settings: SolverSettings,
    pub lm: LmSettings,
    /// Parameters the optimizer may change, in γ order.
    pub active: [bool; P],
}

impl EstimationProblem {
    pub fn new(scenarios: Vec<ScenarioTarget>, rho: f64) -> Self {
        Self {
            scenarios,
            rho,
            bounds: Bounds::default(),
            s_nu: DEFAULT_POISSON_WEIGHT,
            settings: SolverSettings { max_steps: 60, pos_tol: 0.0, ..Default::default() },
            lm: LmSettings::default(),
            active: [true; P],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.settings.validate()?;
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.s_nu >= 0.0) {
            return Err(Error::InvalidArgument("s_nu must be non-negative".into()));
        }
        if !self.active.iter().any(|&a| a) {
            return Err(Error::InvalidArgument("no active parameters".into()));
        }
        if let Some(first) = self.scenarios.first() {
            for s in &self.scenarios {
                if let Some(own) = &s.settings {
                    own.validate()?;
                }
                if (s.mesh.n_u, s.mesh.n_v) != (first.mesh.n_u, first.mesh.n_v) {
                    return Err(Error::InvalidArgument(format!(
                        "scenario `{}` is {}x{}, expected {}x{}",
                        s.name, s.mesh.n_u, s.mesh.n_v, first.mesh.n_u, first.mesh.n_v
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn material(&self, gamma: [f64; P]) -> MaterialParams {
        MaterialParams::from_gamma(gamma, self.rho)
    }

    pub fn residual_len(&self) -> usize {
        self.scenarios.iter().map(|s| s.rows()).sum::<usize>() + 1
    }

    fn penalty(&self, gamma: &MaterialParams) -> (f64, [f64; P]) {
        let w = poisson_penalty(gamma.poisson_ratio());
        if w <= 0.0 {
            return (0.0, [0.0; P]);
        }
        let row = (self.s_nu * w).sqrt();
        let scale = 0.5 * self.s_nu.sqrt() / w.sqrt();
        let mut grad = [0.0; P];
        grad[1] = -scale * gamma.c01 / (gamma.c11 * gamma.c11);
        grad[2] = scale / gamma.c11;
        (row, grad)
    }

    fn evaluate_all(&self, gamma: &MaterialParams, jacobian: bool) -> Result<Vec<ScenarioRows>> {
        gamma.validate()?;
        self.scenarios.par_iter().map(|s| s.evaluate(gamma, &self.settings, jacobian)).collect()
    }

    pub fn residual(&self, gamma: &MaterialParams) -> Result<Vec<f64>> {
        let blocks = self.evaluate_all(gamma, false)?;
        let mut r = Vec::with_capacity(self.residual_len());
        for (s, b) in self.scenarios.iter().zip(blocks) {
            let w = s.force_weight.unwrap_or(1.0);
            r.extend(b.desc);
            r.extend(b.force.iter().map(|f| w * f));
        }
        r.push(self.penalty(gamma).0);
        Ok(r)
    }

    /// Residual and m×5 Jacobian with respect to γ.
    pub fn residual_and_jacobian(&self, gamma: &MaterialParams) -> Result<(Vec<f64>, Vec<[f64; P]>)> {
        let blocks = self.evaluate_all(gamma, true)?;
        let m = self.residual_len();
        let mut r = Vec::with_capacity(m);
        let mut j = Vec::with_capacity(m);
        for (s, b) in self.scenarios.iter().zip(blocks) {
            let w = s.force_weight.unwrap_or(1.0);
            r.extend(b.desc);
            j.extend(b.desc_jac);
            r.extend(b.force.iter().map(|f| w * f));
            j.extend(b.force_jac.iter().map(|g| g.map(|v| w * v)));
        }
        let (row, grad) = self.penalty(gamma);
        r.push(row);
        j.push(grad);
        Ok((r, j))
    }

    /// ‖r‖².
    pub fn objective(&self, gamma: &MaterialParams) -> Result<f64> {
        Ok(self.residual(gamma)?.iter().map(|v| v * v).sum())
    }

    /// Fills every unset force weight so the force block has the same norm
    /// as the descriptor block at `gamma`.
    pub fn balance_force_weights(&mut self, gamma: &MaterialParams) -> Result<()> {
        if self.scenarios.iter().all(|s| s.force_weight.is_some() || s.target_forces.is_empty()) {
            for s in &mut self.scenarios {
                s.force_weight.get_or_insert(1.0);
            }
            return Ok(());
        }
        let blocks = self.evaluate_all(gamma, false)?;
        let (mut d2, mut f2) = (0.0, 0.0);
        for (s, b) in self.scenarios.iter().zip(&blocks) {
            if s.force_weight.is_none() {
                d2 += b.desc.iter().map(|v| v * v).sum::<f64>();
                f2 += b.force.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let w = if d2 > 0.0 && f2 > 0.0 { (d2 / f2).sqrt() } else { 1.0 };
        for s in &mut self.scenarios {
            s.force_weight.get_or_insert(w);
        }
        Ok(())
    }

    pub fn with_active(mut self, active: [bool; P]) -> Self {
        self.active = active;
        self
    }

    /// Scenarios of both problems under one residual; settings come from `self`.
    pub fn merged(&self, other: &EstimationProblem) -> Self {
        let mut out = self.clone();
        out.scenarios.extend(other.scenarios.iter().cloned());
        out.active = [true; P];
        out
    }

    pub fn force_weights(&self) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.force_weight.unwrap_or(1.0)).collect()
    }
}
