//! Reaction forces recovered from the constraint multipliers.
//!
//! A constraint row with multiplier λ exerts `∇C · λ / dt²` on its vertices.

use super::constraints::{deformation_gradient, dihedral_angle, dihedral_gradient, strain_gradient};
use super::{ConstraintSet, SimState};
use crate::error::{Error, Result};
use crate::material::PARAM_COUNT as P;
use crate::math::{axpy, dot, norm, Dual, Vec3};
use crate::sensitivity::SensitivityState;

/// Net constraint force on every vertex, dyn.
pub fn vertex_constraint_forces(state: &SimState, cs: &ConstraintSet, dt: f64) -> Vec<Vec3> {
    let inv_dt2 = 1.0 / (dt * dt);
    let mut out = vec![[0.0; 3]; state.positions.len()];
    for (t, el) in cs.triangles.iter().enumerate() {
        let x = el.vertices.map(|v| state.positions[v]);
        let f = deformation_gradient(&x, &el.weights);
        let g = strain_gradient(&f, &el.weights);
        for r in 0..3 {
            let l = state.lambdas[3 * t + r] * inv_dt2;
            for (i, &v) in el.vertices.iter().enumerate() {
                axpy(&mut out[v], l, g[r][i]);
            }
        }
    }
    for (h, el) in cs.hinges.iter().enumerate() {
        let x = el.vertices.map(|v| state.positions[v]);
        if dihedral_angle(&x).is_none() {
            continue;
        }
        let g = dihedral_gradient(&x);
        let l = state.lambdas[cs.hinge_row(h)] * inv_dt2;
        for (i, &v) in el.vertices.iter().enumerate() {
            axpy(&mut out[v], l, g[i]);
        }
    }
    out
}

fn check_sets(attachment_sets: &[Vec<usize>], n: usize) -> Result<()> {
    for (k, set) in attachment_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("attachment set {k} is empty")));
        }
        if let Some(&v) = set.iter().find(|&&v| v >= n) {
            return Err(Error::InvalidArgument(format!("attachment set {k} references vertex {v}")));
        }
    }
    Ok(())
}

/// Magnitude of the net constraint force on each attachment set, dyn.
pub fn boundary_forces(
    state: &SimState,
    cs: &ConstraintSet,
    dt: f64,
    attachment_sets: &[Vec<usize>],
) -> Result<Vec<f64>> {
    check_sets(attachment_sets, state.positions.len())?;
    let per_vertex = vertex_constraint_forces(state, cs, dt);
    Ok(attachment_sets
        .iter()
        .map(|set| {
            let mut total = [0.0; 3];
            for &v in set {
                axpy(&mut total, 1.0, per_vertex[v]);
            }
            norm(total)
        })
        .collect())
}

/// Per-vertex constraint forces and their parameter derivatives.
pub(crate) fn vertex_constraint_force_sensitivities(
    state: &SimState,
    sens: &SensitivityState,
    cs: &ConstraintSet,
    dt: f64,
) -> (Vec<Vec3>, Vec<[Vec3; P]>) {
    let inv_dt2 = 1.0 / (dt * dt);
    let n = state.positions.len();
    let mut force = vec![[0.0; 3]; n];
    let mut dforce = vec![[[0.0; 3]; P]; n];
    for (t, el) in cs.triangles.iter().enumerate() {
        let x = el.vertices.map(|v| state.positions[v]);
        let f = deformation_gradient(&x, &el.weights);
        let g = strain_gradient(&f, &el.weights);
        let gd: [[[Vec3; 3]; 3]; P] = std::array::from_fn(|k| {
            let xd = el.vertices.map(|v| sens.dx[v][k]);
            strain_gradient(&deformation_gradient(&xd, &el.weights), &el.weights)
        });
        for r in 0..3 {
            let row = 3 * t + r;
            let l = state.lambdas[row] * inv_dt2;
            for (i, &v) in el.vertices.iter().enumerate() {
                axpy(&mut force[v], l, g[r][i]);
                for k in 0..P {
                    let ld = sens.dlambda[row][k] * inv_dt2;
                    axpy(&mut dforce[v][k], l, gd[k][r][i]);
                    axpy(&mut dforce[v][k], ld, g[r][i]);
                }
            }
        }
    }
    for (h, el) in cs.hinges.iter().enumerate() {
        let x = el.vertices.map(|v| state.positions[v]);
        if dihedral_angle(&x).is_none() {
            continue;
        }
        let xdual: [[Dual<P>; 3]; 4] = std::array::from_fn(|i| {
            std::array::from_fn(|c| Dual::new(x[i][c], std::array::from_fn(|k| sens.dx[el.vertices[i]][k][c])))
        });
        let g = dihedral_gradient(&xdual);
        let row = cs.hinge_row(h);
        let l = state.lambdas[row] * inv_dt2;
        for (i, &v) in el.vertices.iter().enumerate() {
            for c in 0..3 {
                force[v][c] += l * g[i][c].re;
                for k in 0..P {
                    dforce[v][k][c] += l * g[i][c].eps[k] + sens.dlambda[row][k] * inv_dt2 * g[i][c].re;
                }
            }
        }
    }
    (force, dforce)
}

/// Attachment force magnitudes with their gradients with respect to γ.
pub(crate) fn boundary_force_sensitivities(
    state: &SimState,
    sens: &SensitivityState,
    cs: &ConstraintSet,
    dt: f64,
    attachment_sets: &[Vec<usize>],
) -> Result<Vec<(f64, [f64; P])>> {
    check_sets(attachment_sets, state.positions.len())?;
    let (force, dforce) = vertex_constraint_force_sensitivities(state, sens, cs, dt);
    Ok(attachment_sets
        .iter()
        .map(|set| {
            let mut total = [0.0; 3];
            let mut dtotal = [[0.0; 3]; P];
            for &v in set {
                axpy(&mut total, 1.0, force[v]);
                for k in 0..P {
                    axpy(&mut dtotal[k], 1.0, dforce[v][k]);
                }
            }
            let mag = norm(total);
            let grad = if mag > 0.0 { std::array::from_fn(|k| dot(total, dtotal[k]) / mag) } else { [0.0; P] };
            (mag, grad)
        })
        .collect())
}
