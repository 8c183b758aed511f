//! Membrane and bending constraint functions with their gradients.

use crate::error::{Error, Result};
use crate::math::{cross, dot, gadd, gcross, gdot, gscale, gsub, norm, sub, Scalar, Vec3};
use crate::mesh::Mat2;

/// Per-vertex coefficients `d_v` with `F = Σ_v x_v d_vᵀ`.
///
/// Rows of `D_m⁻¹` give the second and third vertex; the first vertex takes
/// minus their sum.
pub fn shape_weights(rest_basis: &Mat2) -> [[f64; 2]; 3] {
    let d2 = rest_basis[0];
    let d3 = rest_basis[1];
    [[-d2[0] - d3[0], -d2[1] - d3[1]], d2, d3]
}

/// Columns of the 3×2 deformation gradient.
#[inline]
pub fn deformation_gradient(x: &[Vec3; 3], weights: &[[f64; 2]; 3]) -> [Vec3; 2] {
    let mut f = [[0.0; 3]; 2];
    for (xv, d) in x.iter().zip(weights) {
        for a in 0..2 {
            for c in 0..3 {
                f[a][c] += xv[c] * d[a];
            }
        }
    }
    f
}

#[inline]
pub fn strain_from_gradient(f: &[Vec3; 2]) -> [f64; 3] {
    [0.5 * (dot(f[0], f[0]) - 1.0), 0.5 * (dot(f[1], f[1]) - 1.0), dot(f[0], f[1])]
}

/// Green strain in Voigt order `(E_uu, E_vv, 2 E_uv)`.
pub fn green_strain(positions: &[Vec3], tri: [usize; 3], rest_basis: &Mat2) -> [f64; 3] {
    let x = [positions[tri[0]], positions[tri[1]], positions[tri[2]]];
    strain_from_gradient(&deformation_gradient(&x, &shape_weights(rest_basis)))
}

/// `∂C_r/∂x_v` for the three strain rows, indexed `[row][vertex]`.
#[inline]
pub fn strain_gradient(f: &[Vec3; 2], weights: &[[f64; 2]; 3]) -> [[Vec3; 3]; 3] {
    let mut g = [[[0.0; 3]; 3]; 3];
    for v in 0..3 {
        let [d0, d1] = weights[v];
        for c in 0..3 {
            g[0][v][c] = d0 * f[0][c];
            g[1][v][c] = d1 * f[1][c];
            g[2][v][c] = d0 * f[1][c] + d1 * f[0][c];
        }
    }
    g
}

/// Bending angle as printed for the hinge stencil:
/// `arccos(n̂1 · n̂2) − φ0` with `n1 = x21 × x31`, `n2 = x21 × x41`.
///
/// With this stencil a flat hinge whose wings lie on opposite sides of the
/// shared edge measures π. The simulator uses [`dihedral_angle`] instead.
pub fn bending_constraint(x1: Vec3, x2: Vec3, x3: Vec3, x4: Vec3, phi0: f64) -> Result<f64> {
    let e = sub(x2, x1);
    let n1 = cross(e, sub(x3, x1));
    let n2 = cross(e, sub(x4, x1));
    let (l1, l2) = (norm(n1), norm(n2));
    let scale = dot(e, e).max(f64::MIN_POSITIVE);
    if l1 <= 1e-14 * scale || l2 <= 1e-14 * scale {
        return Err(Error::DegenerateHinge("collinear bending stencil".into()));
    }
    let c = (dot(n1, n2) / (l1 * l2)).clamp(-1.0, 1.0);
    Ok(c.acos() - phi0)
}

/// Signed dihedral angle of the hinge `(x1, x2 | x3, x4)`.
///
/// Normals are taken with consistent orientation across the shared edge, so a
/// flat sheet measures 0 and the sign tells which way the hinge folds. Its
/// magnitude equals `π − bending_constraint(.., 0)`. Returns `None` for a
/// collapsed wing triangle.
pub fn dihedral_angle(x: &[Vec3; 4]) -> Option<f64> {
    let [e1, e2, wa, wb] = *x;
    let n1 = cross(sub(wa, e1), sub(wa, e2));
    let n2 = cross(sub(wb, e2), sub(wb, e1));
    let e = sub(e2, e1);
    let (l1, l2, le) = (norm(n1), norm(n2), norm(e));
    if l1 <= 1e-14 * le * le || l2 <= 1e-14 * le * le || le == 0.0 {
        return None;
    }
    let cos = dot(n1, n2) / (l1 * l2);
    let sin = dot(cross(n2, n1), e) / (l1 * l2 * le);
    Some(sin.atan2(cos))
}

/// Closed-form gradient of [`dihedral_angle`], indexed by stencil vertex.
///
/// Generic so that evaluating it on dual numbers yields exact
/// Hessian-vector products.
pub fn dihedral_gradient<S: Scalar>(x: &[[S; 3]; 4]) -> [[S; 3]; 4] {
    let [e1, e2, wa, wb] = *x;
    let n1 = gcross(gsub(wa, e1), gsub(wa, e2));
    let n2 = gcross(gsub(wb, e2), gsub(wb, e1));
    let e = gsub(e2, e1);
    let le = gdot(e, e).sqrt();
    let q1 = gscale(n1, S::cst(1.0) / gdot(n1, n1));
    let q2 = gscale(n2, S::cst(1.0) / gdot(n2, n2));
    let inv_le = S::cst(1.0) / le;

    let g_wa = gscale(q1, le);
    let g_wb = gscale(q2, le);
    let g_e1 = gadd(gscale(q1, gdot(gsub(wa, e2), e) * inv_le), gscale(q2, gdot(gsub(wb, e2), e) * inv_le));
    let g_e2 = gadd(gscale(q1, -(gdot(gsub(wa, e1), e) * inv_le)), gscale(q2, -(gdot(gsub(wb, e1), e) * inv_le)));
    [g_e1, g_e2, g_wa, g_wb]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{add, Dual};
    use crate::mesh::invert_edge_matrix;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rotation(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
        let n = norm(axis);
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn apply(r: &[[f64; 3]; 3], p: Vec3, t: Vec3) -> Vec3 {
        add(crate::math::mat3_vec(r, p), t)
    }

    #[test]
    fn strain_at_rest_is_zero() {
        let basis = invert_edge_matrix([1.0, 0.0], [0.0, 1.0]).unwrap();
        let pos = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(green_strain(&pos, [0, 1, 2], &basis), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_stretch_along_u() {
        let basis = invert_edge_matrix([1.0, 0.0], [0.0, 1.0]).unwrap();
        let pos = [[0.0, 0.0, 0.0], [1.1, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let e = green_strain(&pos, [0, 1, 2], &basis);
        assert!((e[0] - 0.105).abs() < 1e-15);
        assert!(e[1].abs() < 1e-15 && e[2].abs() < 1e-15);
    }

    #[test]
    fn strain_gradient_matches_finite_differences() {
        let basis = invert_edge_matrix([1.3, 0.2], [0.4, 0.9]).unwrap();
        let w = shape_weights(&basis);
        let x = [[0.1, -0.2, 0.3], [1.5, 0.1, -0.2], [0.2, 1.1, 0.4]];
        let g = strain_gradient(&deformation_gradient(&x, &w), &w);
        let h = 1e-6;
        for v in 0..3 {
            for c in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[v][c] += h;
                xm[v][c] -= h;
                let cp = strain_from_gradient(&deformation_gradient(&xp, &w));
                let cm = strain_from_gradient(&deformation_gradient(&xm, &w));
                for r in 0..3 {
                    let fd = (cp[r] - cm[r]) / (2.0 * h);
                    assert!((fd - g[r][v][c]).abs() < 1e-8, "row {r} vertex {v} coord {c}");
                }
            }
        }
    }

    #[test]
    fn bending_examples() {
        let x1 = [0.0, 0.0, 0.0];
        let x2 = [1.0, 0.0, 0.0];
        // coplanar with both wings on the same side: parallel normals
        let c = bending_constraint(x1, x2, [0.5, 1.0, 0.0], [0.2, 2.0, 0.0], 0.0).unwrap();
        assert!(c.abs() < 1e-12);
        let c = bending_constraint(x1, x2, [0.5, 1.0, 0.0], [0.5, 0.0, 1.0], 0.0).unwrap();
        assert!((c - FRAC_PI_2).abs() < 1e-12);
        // wings on opposite sides: antiparallel normals
        let c = bending_constraint(x1, x2, [0.5, 1.0, 0.0], [0.5, -1.0, 0.0], 0.0).unwrap();
        assert!((c - PI).abs() < 1e-12);
    }

    #[test]
    fn collinear_stencil_is_degenerate() {
        let r = bending_constraint([0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, 1.0, 0.0], 0.0);
        assert!(matches!(r, Err(Error::DegenerateHinge(_))));
    }

    #[test]
    fn flat_hinge_has_zero_dihedral() {
        let x = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.5, -1.0, 0.0]];
        assert_eq!(dihedral_angle(&x).unwrap(), 0.0);
    }

    #[test]
    fn dihedral_magnitude_complements_printed_angle() {
        let x = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.3], [0.4, -0.8, 0.7]];
        let raw = bending_constraint(x[0], x[1], x[2], x[3], 0.0).unwrap();
        let theta = dihedral_angle(&x).unwrap();
        assert!((theta.abs() - (PI - raw)).abs() < 1e-12);
    }

    fn fd_gradient(x: &[Vec3; 4]) -> [[f64; 3]; 4] {
        let h = 1e-6;
        let mut g = [[0.0; 3]; 4];
        for v in 0..4 {
            for c in 0..3 {
                let mut xp = *x;
                let mut xm = *x;
                xp[v][c] += h;
                xm[v][c] -= h;
                g[v][c] = (dihedral_angle(&xp).unwrap() - dihedral_angle(&xm).unwrap()) / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn dihedral_gradient_matches_finite_differences() {
        let cases = [
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.5, -1.0, 0.0]],
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.3], [0.4, -0.8, 0.7]],
            [[0.2, 0.1, -0.3], [1.1, 0.3, 0.2], [0.7, 1.2, -0.5], [0.3, -0.9, -0.6]],
        ];
        for x in cases {
            let g = dihedral_gradient(&x);
            let fd = fd_gradient(&x);
            for v in 0..4 {
                for c in 0..3 {
                    assert!((g[v][c] - fd[v][c]).abs() < 1e-7, "{x:?} v{v} c{c}: {} vs {}", g[v][c], fd[v][c]);
                }
            }
        }
    }

    #[test]
    fn dual_gradient_gives_hessian_vector_product() {
        let x = [[0.2, 0.1, -0.3], [1.1, 0.3, 0.2], [0.7, 1.2, -0.5], [0.3, -0.9, -0.6]];
        let dir = [[0.3, -0.1, 0.2], [0.0, 0.5, -0.4], [0.7, 0.2, 0.1], [-0.2, 0.3, 0.6]];
        let xd: [[Dual<1>; 3]; 4] = std::array::from_fn(|v| std::array::from_fn(|c| Dual::new(x[v][c], [dir[v][c]])));
        let gd = dihedral_gradient(&xd);
        let h = 1e-6;
        let shift = |s: f64| -> [Vec3; 4] { std::array::from_fn(|v| add(x[v], crate::math::scale(dir[v], s))) };
        let gp = dihedral_gradient(&shift(h));
        let gm = dihedral_gradient(&shift(-h));
        for v in 0..4 {
            for c in 0..3 {
                let fd = (gp[v][c] - gm[v][c]) / (2.0 * h);
                assert!((gd[v][c].eps[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    proptest! {
        #[test]
        fn green_strain_is_rigid_motion_invariant(
            px in prop::array::uniform9(-2.0f64..2.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -PI..PI,
            t in prop::array::uniform3(-10.0f64..10.0),
        ) {
            prop_assume!(norm(axis) > 1e-3);
            let basis = invert_edge_matrix([1.0, 0.2], [0.3, 1.2]).unwrap();
            let x = [[px[0], px[1], px[2]], [px[3], px[4], px[5]], [px[6], px[7], px[8]]];
            let r = rotation(axis, angle);
            let y: Vec<Vec3> = x.iter().map(|&p| apply(&r, p, t)).collect();
            let a = green_strain(&x, [0, 1, 2], &basis);
            let b = green_strain(&y, [0, 1, 2], &basis);
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn bending_is_rigid_motion_and_scale_invariant(
            wings in prop::array::uniform6(-1.0f64..1.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -PI..PI,
            t in prop::array::uniform3(-10.0f64..10.0),
            s in 0.1f64..10.0,
        ) {
            prop_assume!(norm(axis) > 1e-3);
            let x = [
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [wings[0], 0.5 + wings[1].abs(), wings[2]],
                [wings[3], -0.5 - wings[4].abs(), wings[5]],
            ];
            let r = rotation(axis, angle);
            let y: [Vec3; 4] = std::array::from_fn(|v| apply(&r, crate::math::scale(x[v], s), t));
            let raw_x = bending_constraint(x[0], x[1], x[2], x[3], 0.0).unwrap();
            let raw_y = bending_constraint(y[0], y[1], y[2], y[3], 0.0).unwrap();
            prop_assert!((raw_x - raw_y).abs() < 1e-10);
            let dx = dihedral_angle(&x).unwrap();
            let dy = dihedral_angle(&y).unwrap();
            prop_assert!((dx - dy).abs() < 1e-10);
        }
    }
}
