//! Time stepping and quasi-static relaxation.
//!
//! Every local solve uses the scaled form of the multiplier update,
//! `(dt² K · ∇C M⁻¹ ∇Cᵀ + I) Δλ = −(dt² K C + λ)`, obtained by multiplying the
//! compliance form through by `dt² K` where `K = α⁻¹`. It stays well defined
//! for zero stiffness (Δλ = 0) and never needs `K⁻¹`.

use rayon::prelude::*;

use super::constraints::{
    deformation_gradient, dihedral_angle, dihedral_gradient, strain_from_gradient, strain_gradient,
};
use super::{ConstraintSet, SimState, SolverSettings, SweepMode};
use crate::error::{Error, Result};
use crate::material::PARAM_COUNT as P;
use crate::math::{dot, inverse3, mat3_vec, Dual, Vec3};
use crate::sensitivity::SensitivityState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepDiagnostics {
    /// Triangle solves skipped because the local system was singular.
    pub skipped_triangles: usize,
    /// Hinge solves skipped because a wing triangle collapsed.
    pub skipped_hinges: usize,
}

impl StepDiagnostics {
    fn absorb(&mut self, other: StepDiagnostics) {
        self.skipped_triangles += other.skipped_triangles;
        self.skipped_hinges += other.skipped_hinges;
    }
}

#[derive(Clone, Debug)]
pub struct QuasiStaticResult {
    pub state: SimState,
    pub converged: bool,
    /// Steps actually taken.
    pub steps: usize,
    /// Largest vertex displacement during the last step, cm.
    pub final_delta: f64,
    /// Largest vertex displacement per step.
    pub deltas: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

/// Parameter derivative of the triangle stiffness block (without area).
fn stiffness_derivative(k: usize) -> [[f64; 3]; 3] {
    let mut e = [[0.0; 3]; 3];
    match k {
        0 => e[0][0] = 1.0,
        1 => e[1][1] = 1.0,
        2 => {
            e[0][1] = 1.0;
            e[1][0] = 1.0;
        }
        3 => e[2][2] = 1.0,
        _ => {}
    }
    e
}

/// Result of one local solve, before it is applied.
struct LocalUpdate<const V: usize, const R: usize> {
    vertices: [usize; V],
    row0: usize,
    dlambda: [f64; R],
    dx: [Vec3; V],
    sens: Option<Box<LocalSensitivity<V, R>>>,
}

struct LocalSensitivity<const V: usize, const R: usize> {
    dlambda: [[f64; R]; P],
    dx: [[Vec3; V]; P],
}

struct SensView<'a> {
    dx: &'a [[Vec3; P]],
    dlambda: &'a [[f64; P]],
}

#[allow(clippy::too_many_arguments)]
fn solve_triangle(
    t: usize,
    cs: &ConstraintSet,
    x: &[Vec3],
    lambdas: &[f64],
    inv_mass: &[f64],
    dt: f64,
    sens: Option<&SensView<'_>>,
    hessian_terms: bool,
) -> Option<LocalUpdate<3, 3>> {
    let el = &cs.triangles[t];
    let vs = el.vertices;
    let xl = vs.map(|v| x[v]);
    let w = vs.map(|v| inv_mass[v]);
    let f = deformation_gradient(&xl, &el.weights);
    let c = strain_from_gradient(&f);
    let g = strain_gradient(&f, &el.weights);

    let mut a = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in r..3 {
            let v: f64 = (0..3).map(|i| w[i] * dot(g[r][i], g[s][i])).sum();
            a[r][s] = v;
            a[s][r] = v;
        }
    }
    let dt2a = dt * dt * el.area;
    let b = cs.material.stiffness_block().map(|row| row.map(|v| v * dt2a));
    let mut m = crate::math::mat3_mul(&b, &a);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let minv = inverse3(&m)?;
    let row0 = 3 * t;
    let lam = [lambdas[row0], lambdas[row0 + 1], lambdas[row0 + 2]];
    let bc = mat3_vec(&b, c);
    let dl = mat3_vec(&minv, [-(bc[0] + lam[0]), -(bc[1] + lam[1]), -(bc[2] + lam[2])]);
    let mut dx = [[0.0; 3]; 3];
    for i in 0..3 {
        for r in 0..3 {
            crate::math::axpy(&mut dx[i], w[i] * dl[r], g[r][i]);
        }
    }

    let sens = sens.map(|sv| {
        let mut out = LocalSensitivity::<3, 3> { dlambda: [[0.0; 3]; P], dx: [[[0.0; 3]; 3]; P] };
        for k in 0..P {
            let xd = vs.map(|v| sv.dx[v][k]);
            let fd = deformation_gradient(&xd, &el.weights);
            let cd = [dot(f[0], fd[0]), dot(f[1], fd[1]), dot(fd[0], f[1]) + dot(f[0], fd[1])];
            let gd = if hessian_terms { strain_gradient(&fd, &el.weights) } else { [[[0.0; 3]; 3]; 3] };
            let mut ad = [[0.0; 3]; 3];
            if hessian_terms {
                for r in 0..3 {
                    for s in r..3 {
                        let v: f64 = (0..3).map(|i| w[i] * (dot(gd[r][i], g[s][i]) + dot(g[r][i], gd[s][i]))).sum();
                        ad[r][s] = v;
                        ad[s][r] = v;
                    }
                }
            }
            let bd = stiffness_derivative(k).map(|row| row.map(|v| v * dt2a));
            let bda = crate::math::mat3_mul(&bd, &a);
            let bad = crate::math::mat3_mul(&b, &ad);
            let bdc = mat3_vec(&bd, c);
            let bcd = mat3_vec(&b, cd);
            let mut rhs = [0.0; 3];
            for r in 0..3 {
                let md_dl: f64 = (0..3).map(|s| (bda[r][s] + bad[r][s]) * dl[s]).sum();
                rhs[r] = -(bdc[r] + bcd[r] + sv.dlambda[row0 + r][k]) - md_dl;
            }
            let dld = mat3_vec(&minv, rhs);
            out.dlambda[k] = dld;
            for i in 0..3 {
                let mut acc = [0.0; 3];
                for r in 0..3 {
                    crate::math::axpy(&mut acc, dl[r], gd[r][i]);
                    crate::math::axpy(&mut acc, dld[r], g[r][i]);
                }
                out.dx[k][i] = acc.map(|v| v * w[i]);
            }
        }
        Box::new(out)
    });

    Some(LocalUpdate { vertices: vs, row0, dlambda: dl, dx, sens })
}

#[allow(clippy::too_many_arguments)]
fn solve_hinge(
    h: usize,
    cs: &ConstraintSet,
    x: &[Vec3],
    lambdas: &[f64],
    inv_mass: &[f64],
    dt: f64,
    sens: Option<&SensView<'_>>,
    hessian_terms: bool,
) -> Option<LocalUpdate<4, 1>> {
    let el = &cs.hinges[h];
    let vs = el.vertices;
    let xl = vs.map(|v| x[v]);
    let w = vs.map(|v| inv_mass[v]);
    let theta = dihedral_angle(&xl)?;
    let c = theta - el.rest_angle;
    let g = dihedral_gradient(&xl);
    let a: f64 = (0..4).map(|i| w[i] * dot(g[i], g[i])).sum();
    let bb = dt * dt * cs.material.b;
    let m = bb * a + 1.0;
    let row0 = cs.hinge_row(h);
    let lam = lambdas[row0];
    let dl = -(bb * c + lam) / m;
    let dx = std::array::from_fn(|i| g[i].map(|v| v * w[i] * dl));

    let sens = sens.map(|sv| {
        let mut out = LocalSensitivity::<4, 1> { dlambda: [[0.0; 1]; P], dx: [[[0.0; 3]; 4]; P] };
        let gd: [[[f64; 3]; 4]; P] = if hessian_terms {
            let xdual: [[Dual<P>; 3]; 4] = std::array::from_fn(|i| {
                std::array::from_fn(|comp| Dual::new(xl[i][comp], std::array::from_fn(|k| sv.dx[vs[i]][k][comp])))
            });
            let gdual = dihedral_gradient(&xdual);
            std::array::from_fn(|k| std::array::from_fn(|i| std::array::from_fn(|comp| gdual[i][comp].eps[k])))
        } else {
            [[[0.0; 3]; 4]; P]
        };
        for k in 0..P {
            let cd: f64 = (0..4).map(|i| dot(g[i], sv.dx[vs[i]][k])).sum();
            let ad: f64 = (0..4).map(|i| 2.0 * w[i] * dot(g[i], gd[k][i])).sum();
            let bd = if k == 4 { dt * dt } else { 0.0 };
            let md = bd * a + bb * ad;
            let dld = (-(bd * c + bb * cd + sv.dlambda[row0][k]) - md * dl) / m;
            out.dlambda[k] = [dld];
            for i in 0..4 {
                for comp in 0..3 {
                    out.dx[k][i][comp] = w[i] * (gd[k][i][comp] * dl + g[i][comp] * dld);
                }
            }
        }
        Box::new(out)
    });

    Some(LocalUpdate { vertices: vs, row0, dlambda: [dl], dx, sens })
}

fn apply_update<const V: usize, const R: usize>(
    u: &LocalUpdate<V, R>,
    state: &mut SimState,
    sens: Option<&mut SensitivityState>,
) {
    for (i, &v) in u.vertices.iter().enumerate() {
        for c in 0..3 {
            state.positions[v][c] += u.dx[i][c];
        }
    }
    for r in 0..R {
        state.lambdas[u.row0 + r] += u.dlambda[r];
    }
    if let (Some(s), Some(ls)) = (sens, u.sens.as_ref()) {
        for k in 0..P {
            for (i, &v) in u.vertices.iter().enumerate() {
                for c in 0..3 {
                    s.dx[v][k][c] += ls.dx[k][i][c];
                }
            }
            for r in 0..R {
                s.dlambda[u.row0 + r][k] += ls.dlambda[k][r];
            }
        }
    }
}

fn gauss_seidel_sweep(
    state: &mut SimState,
    mut sens: Option<&mut SensitivityState>,
    cs: &ConstraintSet,
    inv_mass: &[f64],
    settings: &SolverSettings,
) -> StepDiagnostics {
    let mut diag = StepDiagnostics::default();
    for t in 0..cs.triangles.len() {
        let view = sens.as_deref().map(|s| SensView { dx: &s.dx, dlambda: &s.dlambda });
        let u = solve_triangle(
            t,
            cs,
            &state.positions,
            &state.lambdas,
            inv_mass,
            settings.dt,
            view.as_ref(),
            settings.hessian_terms,
        );
        match u {
            Some(u) => apply_update(&u, state, sens.as_deref_mut()),
            None => diag.skipped_triangles += 1,
        }
    }
    for h in 0..cs.hinges.len() {
        let view = sens.as_deref().map(|s| SensView { dx: &s.dx, dlambda: &s.dlambda });
        let u = solve_hinge(
            h,
            cs,
            &state.positions,
            &state.lambdas,
            inv_mass,
            settings.dt,
            view.as_ref(),
            settings.hessian_terms,
        );
        match u {
            Some(u) => apply_update(&u, state, sens.as_deref_mut()),
            None => diag.skipped_hinges += 1,
        }
    }
    diag
}

fn jacobi_sweep(
    state: &mut SimState,
    mut sens: Option<&mut SensitivityState>,
    cs: &ConstraintSet,
    inv_mass: &[f64],
    counts: &[f64],
    settings: &SolverSettings,
) -> StepDiagnostics {
    let n = state.positions.len();
    let (tri_updates, hinge_updates) = {
        let view = sens.as_deref().map(|s| SensView { dx: &s.dx, dlambda: &s.dlambda });
        let x = &state.positions;
        let lambdas = &state.lambdas;
        let tri: Vec<_> = (0..cs.triangles.len())
            .into_par_iter()
            .map(|t| solve_triangle(t, cs, x, lambdas, inv_mass, settings.dt, view.as_ref(), settings.hessian_terms))
            .collect();
        let hin: Vec<_> = (0..cs.hinges.len())
            .into_par_iter()
            .map(|h| solve_hinge(h, cs, x, lambdas, inv_mass, settings.dt, view.as_ref(), settings.hessian_terms))
            .collect();
        (tri, hin)
    };

    let mut diag = StepDiagnostics::default();
    let mut acc = vec![[0.0; 3]; n];
    let mut acc_sens = sens.as_ref().map(|_| vec![[[0.0; 3]; P]; n]);

    fn gather<const V: usize, const R: usize>(
        u: &LocalUpdate<V, R>,
        acc: &mut [Vec3],
        acc_sens: Option<&mut Vec<[Vec3; P]>>,
        lambdas: &mut [f64],
        sens: Option<&mut SensitivityState>,
    ) {
        for (i, &v) in u.vertices.iter().enumerate() {
            for c in 0..3 {
                acc[v][c] += u.dx[i][c];
            }
        }
        for r in 0..R {
            lambdas[u.row0 + r] += u.dlambda[r];
        }
        if let (Some(a), Some(ls), Some(s)) = (acc_sens, u.sens.as_ref(), sens) {
            for k in 0..P {
                for (i, &v) in u.vertices.iter().enumerate() {
                    for c in 0..3 {
                        a[v][k][c] += ls.dx[k][i][c];
                    }
                }
                for r in 0..R {
                    s.dlambda[u.row0 + r][k] += ls.dlambda[k][r];
                }
            }
        }
    }

    for u in &tri_updates {
        match u {
            Some(u) => gather(u, &mut acc, acc_sens.as_mut(), &mut state.lambdas, sens.as_deref_mut()),
            None => diag.skipped_triangles += 1,
        }
    }
    for u in &hinge_updates {
        match u {
            Some(u) => gather(u, &mut acc, acc_sens.as_mut(), &mut state.lambdas, sens.as_deref_mut()),
            None => diag.skipped_hinges += 1,
        }
    }

    for v in 0..n {
        if counts[v] == 0.0 {
            continue;
        }
        let s = settings.jacobi_omega / counts[v];
        for c in 0..3 {
            state.positions[v][c] += s * acc[v][c];
        }
        if let (Some(a), Some(st)) = (acc_sens.as_ref(), sens.as_deref_mut()) {
            for k in 0..P {
                for c in 0..3 {
                    st.dx[v][k][c] += s * a[v][k][c];
                }
            }
        }
    }
    diag
}

fn constraint_counts(cs: &ConstraintSet, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for t in &cs.triangles {
        for &v in &t.vertices {
            counts[v] += 1.0;
        }
    }
    for h in &cs.hinges {
        for &v in &h.vertices {
            counts[v] += 1.0;
        }
    }
    counts
}

/// One implicit step: predict, reset multipliers, sweep, update velocities.
pub(crate) fn step_impl(
    state: &mut SimState,
    mut sens: Option<&mut SensitivityState>,
    cs: &ConstraintSet,
    gravity: Vec3,
    settings: &SolverSettings,
) -> StepDiagnostics {
    let dt = settings.dt;
    let n = state.positions.len();
    let previous = state.positions.clone();
    let previous_dx = sens.as_ref().map(|s| s.dx.clone());

    for v in 0..n {
        if state.pinned[v] {
            state.velocities[v] = [0.0; 3];
            continue;
        }
        let inv_m = 1.0 / state.masses[v];
        for c in 0..3 {
            state.velocities[v][c] += dt * (gravity[c] + state.external_force[v][c] * inv_m);
            state.positions[v][c] += dt * state.velocities[v][c];
        }
    }
    if let Some(s) = sens.as_deref_mut() {
        for v in 0..n {
            if state.pinned[v] {
                s.dx[v] = [[0.0; 3]; P];
                s.dv[v] = [[0.0; 3]; P];
                continue;
            }
            for k in 0..P {
                for c in 0..3 {
                    s.dx[v][k][c] += dt * s.dv[v][k][c];
                }
            }
        }
        s.dlambda.iter_mut().for_each(|r| *r = [0.0; P]);
    }
    state.lambdas.iter_mut().for_each(|l| *l = 0.0);

    let inv_mass: Vec<f64> = (0..n).map(|v| state.inverse_mass(v)).collect();
    let counts = match settings.mode {
        SweepMode::Jacobi => constraint_counts(cs, n),
        SweepMode::GaussSeidel => Vec::new(),
    };
    let mut diag = StepDiagnostics::default();
    for _ in 0..settings.iterations {
        let d = match settings.mode {
            SweepMode::GaussSeidel => gauss_seidel_sweep(state, sens.as_deref_mut(), cs, &inv_mass, settings),
            SweepMode::Jacobi => jacobi_sweep(state, sens.as_deref_mut(), cs, &inv_mass, &counts, settings),
        };
        diag.absorb(d);
    }

    for v in 0..n {
        if state.pinned[v] {
            continue;
        }
        for c in 0..3 {
            state.velocities[v][c] = (state.positions[v][c] - previous[v][c]) / dt;
        }
    }
    if let (Some(s), Some(prev)) = (sens, previous_dx) {
        for v in 0..n {
            for k in 0..P {
                for c in 0..3 {
                    s.dv[v][k][c] = (s.dx[v][k][c] - prev[v][k][c]) / dt;
                }
            }
        }
    }
    diag
}

/// Advances `state` by one time step under `gravity` (cm/s²).
pub fn xpbd_step(
    state: &mut SimState,
    constraints: &ConstraintSet,
    settings: &SolverSettings,
    gravity: Vec3,
) -> StepDiagnostics {
    step_impl(state, None, constraints, gravity, settings)
}

/// Repeats steps with velocities zeroed after each one until the largest
/// vertex displacement in a step drops below `pos_tol`.
pub(crate) fn run_quasi_static(
    mut state: SimState,
    mut sens: Option<&mut SensitivityState>,
    cs: &ConstraintSet,
    gravity: Vec3,
    settings: &SolverSettings,
) -> Result<QuasiStaticResult> {
    settings.validate()?;
    let mut deltas = Vec::new();
    let mut diagnostics = StepDiagnostics::default();
    let mut converged = false;
    for step in 1..=settings.max_steps {
        let previous = state.positions.clone();
        diagnostics.absorb(step_impl(&mut state, sens.as_deref_mut(), cs, gravity, settings));
        state.velocities.iter_mut().for_each(|v| *v = [0.0; 3]);
        if let Some(s) = sens.as_deref_mut() {
            s.dv.iter_mut().for_each(|d| *d = [[0.0; 3]; P]);
        }
        let mut delta = 0.0f64;
        for (p, q) in state.positions.iter().zip(&previous) {
            let d = crate::math::norm(crate::math::sub(*p, *q));
            if !d.is_finite() {
                return Err(Error::Divergence { step, reason: "non-finite vertex position".into() });
            }
            delta = delta.max(d);
        }
        deltas.push(delta);
        if delta < settings.pos_tol {
            converged = true;
            break;
        }
    }
    let steps = deltas.len();
    Ok(QuasiStaticResult {
        state,
        converged,
        steps,
        final_delta: deltas.last().copied().unwrap_or(0.0),
        deltas,
        diagnostics,
    })
}

/// Relaxes `mesh.positions` to a static equilibrium under `bc`.
pub fn quasi_static_solve(
    mesh: &crate::mesh::GridMesh,
    constraints: &ConstraintSet,
    bc: &super::BoundaryConditions,
    settings: &SolverSettings,
) -> Result<QuasiStaticResult> {
    let state = SimState::new(mesh, constraints, bc)?;
    run_quasi_static(state, None, constraints, bc.gravity, settings)
}
