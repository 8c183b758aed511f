//! Forward-mode parameter sensitivities carried alongside the solver iterates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimate::EstimationProblem;
use crate::material::{MaterialParams, PARAM_COUNT as P, PARAM_NAMES};
use crate::math::Vec3;
use crate::mesh::GridMesh;
use crate::xpbd::{
    run_quasi_static, step_impl, BoundaryConditions, ConstraintSet, QuasiStaticResult, SimState, SolverSettings,
    StepDiagnostics,
};

/// ∂x/∂γ, ∂v/∂γ and ∂λ/∂γ, columns ordered as (c00, c11, c01, c22, b).
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityState {
    pub dx: Vec<[Vec3; P]>,
    pub dv: Vec<[Vec3; P]>,
    pub dlambda: Vec<[f64; P]>,
}

impl SensitivityState {
    pub fn zeros(vertices: usize, rows: usize) -> Self {
        Self { dx: vec![[[0.0; 3]; P]; vertices], dv: vec![[[0.0; 3]; P]; vertices], dlambda: vec![[0.0; P]; rows] }
    }

    pub fn for_state(state: &SimState) -> Self {
        Self::zeros(state.positions.len(), state.lambdas.len())
    }

    /// Column `k` of ∂x/∂γ.
    pub fn position_column(&self, k: usize) -> Vec<Vec3> {
        self.dx.iter().map(|d| d[k]).collect()
    }

    fn check(&self, state: &SimState) -> Result<()> {
        if self.dx.len() != state.positions.len()
            || self.dv.len() != state.positions.len()
            || self.dlambda.len() != state.lambdas.len()
        {
            return Err(Error::InvalidArgument(format!(
                "sensitivity sized for {} vertices / {} rows, state has {} / {}",
                self.dx.len(),
                self.dlambda.len(),
                state.positions.len(),
                state.lambdas.len()
            )));
        }
        Ok(())
    }
}

/// One time step that also advances the sensitivities.
pub fn step_with_sensitivities(
    state: &mut SimState,
    sens: &mut SensitivityState,
    constraints: &ConstraintSet,
    settings: &SolverSettings,
    gravity: Vec3,
) -> Result<StepDiagnostics> {
    sens.check(state)?;
    Ok(step_impl(state, Some(sens), constraints, gravity, settings))
}

/// Quasi-static solve from `mesh.positions` with sensitivities starting at zero.
pub fn quasi_static_with_sensitivities(
    mesh: &GridMesh,
    constraints: &ConstraintSet,
    bc: &BoundaryConditions,
    settings: &SolverSettings,
) -> Result<(QuasiStaticResult, SensitivityState)> {
    let state = SimState::new(mesh, constraints, bc)?;
    let mut sens = SensitivityState::for_state(&state);
    let result = run_quasi_static(state, Some(&mut sens), constraints, bc.gravity, settings)?;
    Ok((result, sens))
}

/// Residual and its m×5 Jacobian at `gamma`.
pub fn residual_jacobian(problem: &EstimationProblem, gamma: &MaterialParams) -> Result<(Vec<f64>, Vec<[f64; P]>)> {
    problem.residual_and_jacobian(gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnCheck {
    pub parameter: &'static str,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    /// ‖analytic − fd‖ / max(‖fd‖, floor).
    pub rel_error: f64,
}

/// Compares every Jacobian column against central differences with step
/// `rel_step · |γ_k|`.
pub fn gradcheck(
    problem: &EstimationProblem,
    gamma: &MaterialParams,
    rel_step: f64,
    abs_floor: f64,
) -> Result<Vec<ColumnCheck>> {
    let (_, jac) = problem.residual_and_jacobian(gamma)?;
    let g = gamma.gamma();
    (0..P)
        .map(|k| {
            let h = rel_step * g[k].abs().max(1e-8);
            let mut plus = g;
            let mut minus = g;
            plus[k] += h;
            minus[k] -= h;
            let rp = problem.residual(&MaterialParams::from_gamma(plus, gamma.rho))?;
            let rm = problem.residual(&MaterialParams::from_gamma(minus, gamma.rho))?;
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let an: Vec<f64> = jac.iter().map(|row| row[k]).collect();
            let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let analytic_norm = an.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = an.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(ColumnCheck {
                parameter: PARAM_NAMES[k],
                analytic_norm,
                fd_norm,
                rel_error: diff / fd_norm.max(abs_floor),
            })
        })
        .collect()
}

/// Random materials for gradient checks: log-uniform c00, c11 in [3e4, 1e6],
/// c22 in [5e3, 2e5], b in [1, 300], and c01 uniform in [0, 0.8·√(c00·c11)).
pub fn gradcheck_draws(seed: u64, count: usize, rho: f64) -> Vec<MaterialParams> {
    let mut rng = crate::rng::stream(seed, "gradcheck-draws");
    (0..count)
        .map(|_| {
            let mut log_uniform = |lo: f64, hi: f64| rng.gen_range(lo.ln()..hi.ln()).exp();
            let (c00, c11, c22, b) =
                (log_uniform(3e4, 1e6), log_uniform(3e4, 1e6), log_uniform(5e3, 2e5), log_uniform(1.0, 300.0));
            let c01 = rng.gen_range(0.0..0.8) * (c00 * c11).sqrt();
            MaterialParams { c00, c11, c01, c22, b, rho }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_grid;
    use crate::xpbd::xpbd_step;

    fn stretched_triangle() -> (GridMesh, ConstraintSet, BoundaryConditions) {
        let mut mesh = make_grid(2, 2, 1.0, 1.0).unwrap();
        mesh.positions[3] = [1.3, 1.1, 0.05];
        mesh.positions[2] = [1.2, -0.1, 0.02];
        let mat = MaterialParams { c00: 2e3, c11: 3e3, c01: 8e2, c22: 1.5e3, b: 4.0, rho: 0.02 };
        let cs = ConstraintSet::new(&mesh, mat).unwrap();
        let bc = BoundaryConditions {
            pinned: vec![(0, [0.0, 0.0, 0.0])],
            loads: vec![(1, [0.0, 50.0, 20.0])],
            gravity: [0.0, 0.0, -981.0],
            attachments: vec![],
        };
        (mesh, cs, bc)
    }

    fn one_step(mesh: &GridMesh, cs: &ConstraintSet, bc: &BoundaryConditions, s: &SolverSettings) -> SimState {
        let mut st = SimState::new(mesh, cs, bc).unwrap();
        xpbd_step(&mut st, cs, s, bc.gravity);
        st
    }

    #[test]
    fn single_step_matches_finite_differences() {
        let (mesh, cs, bc) = stretched_triangle();
        let settings = SolverSettings { iterations: 3, ..Default::default() };
        let mut st = SimState::new(&mesh, &cs, &bc).unwrap();
        let mut sens = SensitivityState::for_state(&st);
        step_with_sensitivities(&mut st, &mut sens, &cs, &settings, bc.gravity).unwrap();
        let g = cs.material.gamma();
        for k in 0..P {
            let h = 1e-4 * g[k];
            let mut gp = g;
            let mut gm = g;
            gp[k] += h;
            gm[k] -= h;
            let sp = one_step(&mesh, &cs.with_material(MaterialParams::from_gamma(gp, 0.02)), &bc, &settings);
            let sm = one_step(&mesh, &cs.with_material(MaterialParams::from_gamma(gm, 0.02)), &bc, &settings);
            let mut num = 0.0;
            let mut den = 0.0;
            for v in 0..4 {
                for c in 0..3 {
                    let fd = (sp.positions[v][c] - sm.positions[v][c]) / (2.0 * h);
                    num += (sens.dx[v][k][c] - fd).powi(2);
                    den += fd * fd;
                }
            }
            let err = num.sqrt() / den.sqrt().max(1e-12);
            assert!(err < 1e-4, "column {k}: rel err {err}");
        }
    }

    #[test]
    fn pinned_vertices_have_zero_sensitivity() {
        let (mesh, cs, bc) = stretched_triangle();
        let settings = SolverSettings { max_steps: 20, pos_tol: 0.0, ..Default::default() };
        let (_, sens) = quasi_static_with_sensitivities(&mesh, &cs, &bc, &settings).unwrap();
        assert_eq!(sens.dx[0], [[0.0; 3]; P]);
        assert!(sens.dx[1].iter().any(|c| c.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn unconstrained_fall_has_zero_sensitivity() {
        let mesh = make_grid(3, 3, 2.0, 2.0).unwrap();
        let mat = MaterialParams { c00: 1e-300, c11: 1e-300, c01: 0.0, c22: 1e-300, b: 1e-300, rho: 0.02 };
        let cs = ConstraintSet::new(&mesh, mat).unwrap();
        let bc = BoundaryConditions { gravity: [0.0, 0.0, -981.0], ..Default::default() };
        let mut st = SimState::new(&mesh, &cs, &bc).unwrap();
        let mut sens = SensitivityState::for_state(&st);
        for _ in 0..3 {
            step_with_sensitivities(&mut st, &mut sens, &cs, &SolverSettings::default(), bc.gravity).unwrap();
        }
        // ballistic: every vertex fell by (1 + 2 + 3)·dt²·g
        for p in &st.positions {
            assert!((p[2] + 6.0 * 1e-4 * 981.0).abs() < 1e-12);
        }
        assert!(sens.dx.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rest_state_stays_at_zero() {
        let mesh = make_grid(4, 4, 3.0, 3.0).unwrap();
        let cs = ConstraintSet::new(&mesh, MaterialParams::cotton()).unwrap();
        let bc = BoundaryConditions {
            pinned: mesh.boundary_vertices().into_iter().map(|v| (v, mesh.positions[v])).collect(),
            ..Default::default()
        };
        let (res, sens) = quasi_static_with_sensitivities(&mesh, &cs, &bc, &SolverSettings::default()).unwrap();
        assert!(res.converged);
        assert!(sens.dx.iter().flatten().flatten().all(|&v| v == 0.0));
        assert!(sens.dlambda.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let (mesh, cs, bc) = stretched_triangle();
        let mut st = SimState::new(&mesh, &cs, &bc).unwrap();
        let mut sens = SensitivityState::zeros(3, 1);
        assert!(step_with_sensitivities(&mut st, &mut sens, &cs, &SolverSettings::default(), bc.gravity).is_err());
    }
}
