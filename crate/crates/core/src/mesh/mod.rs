//! Regular grid swatch template.
//!
//! Vertex `(i, j)` lives at index `i * n_v + j`, where `i` runs along the warp
//! (u) direction and `j` along the weft (v) direction. Every lattice cell is
//! split along its lower-left to upper-right diagonal, giving two
//! counter-clockwise triangles per cell.

mod obj;

use std::collections::HashMap;

pub use obj::{load_obj, save_obj, write_obj};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// 2×2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct GridMesh {
    pub n_u: usize,
    pub n_v: usize,
    /// Physical extent along u, cm.
    pub side_u: f64,
    /// Physical extent along v, cm.
    pub side_v: f64,
    /// Material coordinates, cm.
    pub rest_uv: Vec<[f64; 2]>,
    /// Current vertex positions, cm.
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// `(shared1, shared2, wing of first triangle, wing of second triangle)`.
    pub hinges: Vec<[usize; 4]>,
}

/// Builds a flat `n_u × n_v` swatch in the z = 0 plane.
pub fn make_grid(n_u: usize, n_v: usize, side_u: f64, side_v: f64) -> Result<GridMesh> {
    if n_u < 2 || n_v < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 vertices per direction, got {n_u}x{n_v}")));
    }
    if !(side_u > 0.0 && side_v > 0.0) || !side_u.is_finite() || !side_v.is_finite() {
        return Err(Error::InvalidArgument(format!("side lengths must be positive, got {side_u} x {side_v}")));
    }

    let du = side_u / (n_u - 1) as f64;
    let dv = side_v / (n_v - 1) as f64;
    let mut rest_uv = Vec::with_capacity(n_u * n_v);
    for i in 0..n_u {
        for j in 0..n_v {
            rest_uv.push([i as f64 * du, j as f64 * dv]);
        }
    }
    let positions = rest_uv.iter().map(|uv| [uv[0], uv[1], 0.0]).collect();

    let idx = |i: usize, j: usize| i * n_v + j;
    let mut triangles = Vec::with_capacity(2 * (n_u - 1) * (n_v - 1));
    for i in 0..n_u - 1 {
        for j in 0..n_v - 1 {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let hinges = build_hinges(&triangles);

    Ok(GridMesh { n_u, n_v, side_u, side_v, rest_uv, positions, triangles, hinges })
}

/// Pairs up triangles across every interior edge.
///
/// The shared edge keeps the direction it has in the first (lower-index)
/// triangle, so a flat consistently oriented sheet has a zero dihedral.
fn build_hinges(triangles: &[[usize; 3]]) -> Vec<[usize; 4]> {
    let mut open: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    let mut hinges = Vec::new();
    for tri in triangles {
        for e in 0..3 {
            let a = tri[e];
            let b = tri[(e + 1) % 3];
            let wing = tri[(e + 2) % 3];
            let key = (a.min(b), a.max(b));
            match open.remove(&key) {
                Some((s1, s2, w1)) => hinges.push([s1, s2, w1, wing]),
                None => {
                    open.insert(key, (a, b, wing));
                }
            }
        }
    }
    hinges
}

impl GridMesh {
    pub fn vertex_count(&self) -> usize {
        self.n_u * self.n_v
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_v + j
    }

    /// Rest-state area of triangle `t`, cm².
    pub fn rest_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.rest_uv[a], self.rest_uv[b], self.rest_uv[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])).abs()
    }

    /// Lumped vertex masses: a third of each incident triangle's mass.
    pub fn lumped_masses(&self, rho: f64) -> Vec<f64> {
        let mut masses = vec![0.0; self.vertex_count()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let m = rho * self.rest_area(t) / 3.0;
            for &v in tri {
                masses[v] += m;
            }
        }
        masses
    }

    /// Vertices on the lattice boundary, in index order.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| {
                let (i, j) = (v / self.n_v, v % self.n_v);
                i == 0 || j == 0 || i + 1 == self.n_u || j + 1 == self.n_v
            })
            .collect()
    }

    /// Returns a copy of this mesh with new positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() != self.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} positions, got {}",
                self.vertex_count(),
                positions.len()
            )));
        }
        Ok(Self { positions, ..self.clone() })
    }
}

/// Inverse material-edge matrix `D_m⁻¹` with `D_m = [uv2 − uv1 | uv3 − uv1]`.
pub fn rest_basis(mesh: &GridMesh, tri_index: usize) -> Result<Mat2> {
    let [a, b, c] = *mesh
        .triangles
        .get(tri_index)
        .ok_or_else(|| Error::InvalidArgument(format!("triangle {tri_index} out of range")))?;
    let (p, q, r) = (mesh.rest_uv[a], mesh.rest_uv[b], mesh.rest_uv[c]);
    invert_edge_matrix([q[0] - p[0], q[1] - p[1]], [r[0] - p[0], r[1] - p[1]])
        .ok_or_else(|| Error::DegenerateElement { index: tri_index, reason: "zero rest area".into() })
}

/// Inverts the 2×2 matrix whose columns are `e1` and `e2`.
pub fn invert_edge_matrix(e1: [f64; 2], e2: [f64; 2]) -> Option<Mat2> {
    let det = e1[0] * e2[1] - e2[0] * e1[1];
    let scale = (e1[0].abs() + e1[1].abs()) * (e2[0].abs() + e2[1].abs());
    if det.abs() <= 1e-14 * scale || det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([[e2[1] * inv, -e2[0] * inv], [-e1[1] * inv, e1[0] * inv]])
}
