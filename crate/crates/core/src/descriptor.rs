//! Shape descriptors compared between simulated and target swatches.
//!
//! Each descriptor exposes its value and a directional derivative along a
//! position perturbation, which the residual Jacobian chains through.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{MaterialParams, PARAM_COUNT};
use crate::math::{dot, Vec3};
use crate::spectral::dft2_in_place;
use crate::xpbd::constraints::{deformation_gradient, dihedral_angle, dihedral_gradient, strain_from_gradient};
use crate::xpbd::ConstraintSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Pos,
    Strain,
    Energy,
    Fft,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 4] = [Self::Pos, Self::Strain, Self::Energy, Self::Fft];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pos => "pos",
            Self::Strain => "strain",
            Self::Energy => "energy",
            Self::Fft => "fft",
        }
    }

    /// Whether the descriptor value depends on γ at fixed positions.
    pub fn depends_on_material(self) -> bool {
        matches!(self, Self::Energy)
    }
}

impl std::str::FromStr for DescriptorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown descriptor `{s}` (pos, strain, energy, fft)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// xyz per vertex.
    VertexMajor { vertices: usize },
    /// Three rows per triangle (or one energy per triangle), then one per hinge.
    ConstraintMajor { triangles: usize, hinges: usize, rows_per_triangle: usize },
    /// |X|/N for the x, y, z channels over an `n_u × n_v` frequency grid.
    Spectral { n_u: usize, n_v: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl Descriptor {
    pub fn check_comparable(&self, other: &Descriptor) -> Result<()> {
        if self.kind != other.kind || self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::InvalidArgument(format!(
                "descriptor layouts differ: {:?}/{:?} vs {:?}/{:?}",
                self.kind, self.layout, other.kind, other.layout
            )));
        }
        Ok(())
    }

    /// L2 distance between two comparable descriptors.
    pub fn distance(&self, other: &Descriptor) -> Result<f64> {
        self.check_comparable(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

pub fn descriptor_pos(positions: &[Vec3]) -> Descriptor {
    Descriptor {
        kind: DescriptorKind::Pos,
        values: positions.iter().flatten().copied().collect(),
        layout: Layout::VertexMajor { vertices: positions.len() },
    }
}

fn hinge_angle(cs: &ConstraintSet, h: usize, positions: &[Vec3]) -> Result<f64> {
    let el = &cs.hinges[h];
    let x = el.vertices.map(|v| positions[v]);
    dihedral_angle(&x)
        .map(|theta| theta - el.rest_angle)
        .ok_or_else(|| Error::DegenerateHinge(format!("hinge {h} {:?} has a collapsed wing", el.vertices)))
}

fn triangle_strain(cs: &ConstraintSet, t: usize, positions: &[Vec3]) -> ([Vec3; 2], [f64; 3]) {
    let el = &cs.triangles[t];
    let f = deformation_gradient(&el.vertices.map(|v| positions[v]), &el.weights);
    (f, strain_from_gradient(&f))
}

fn strain_rate(f: &[Vec3; 2], fd: &[Vec3; 2]) -> [f64; 3] {
    [dot(f[0], fd[0]), dot(f[1], fd[1]), dot(fd[0], f[1]) + dot(f[0], fd[1])]
}

fn check_positions(positions: &[Vec3], cs: &ConstraintSet) -> Result<()> {
    let max = cs
        .triangles
        .iter()
        .flat_map(|t| t.vertices)
        .chain(cs.hinges.iter().flat_map(|h| h.vertices))
        .max()
        .unwrap_or(0);
    if !cs.triangles.is_empty() && max >= positions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions do not cover constraint vertex {max}",
            positions.len()
        )));
    }
    Ok(())
}

/// Triangle Voigt strains followed by hinge angle strains.
pub fn descriptor_strain(positions: &[Vec3], constraints: &ConstraintSet) -> Result<Descriptor> {
    check_positions(positions, constraints)?;
    let mut values = Vec::with_capacity(constraints.row_count());
    for t in 0..constraints.triangles.len() {
        values.extend(triangle_strain(constraints, t, positions).1);
    }
    for h in 0..constraints.hinges.len() {
        values.push(hinge_angle(constraints, h, positions)?);
    }
    Ok(Descriptor {
        kind: DescriptorKind::Strain,
        values,
        layout: Layout::ConstraintMajor {
            triangles: constraints.triangles.len(),
            hinges: constraints.hinges.len(),
            rows_per_triangle: 3,
        },
    })
}

fn quad_form(k: &[[f64; 3]; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|r| (0..3).map(|s| a[r] * k[r][s] * b[s]).sum::<f64>()).sum()
}

/// Per-element elastic energies: ½·A·CᵀKC per triangle, ½·b·θ² per hinge.
pub fn descriptor_energy(
    positions: &[Vec3],
    constraints: &ConstraintSet,
    material: &MaterialParams,
) -> Result<Descriptor> {
    check_positions(positions, constraints)?;
    let k = material.stiffness_block();
    let mut values = Vec::with_capacity(constraints.triangles.len() + constraints.hinges.len());
    for (t, el) in constraints.triangles.iter().enumerate() {
        let c = triangle_strain(constraints, t, positions).1;
        values.push(0.5 * el.area * quad_form(&k, c, c));
    }
    for h in 0..constraints.hinges.len() {
        let theta = hinge_angle(constraints, h, positions)?;
        values.push(0.5 * material.b * theta * theta);
    }
    Ok(Descriptor {
        kind: DescriptorKind::Energy,
        values,
        layout: Layout::ConstraintMajor {
            triangles: constraints.triangles.len(),
            hinges: constraints.hinges.len(),
            rows_per_triangle: 1,
        },
    })
}

fn check_grid(positions: &[Vec3], n_u: usize, n_v: usize) -> Result<()> {
    if positions.len() != n_u * n_v {
        return Err(Error::InvalidArgument(format!("{} positions for a {n_u}x{n_v} grid", positions.len())));
    }
    Ok(())
}

fn channel_spectrum(positions: &[Vec3], c: usize, n_u: usize, n_v: usize) -> Vec<Complex64> {
    let n = positions.len() as f64;
    let mean = positions.iter().map(|p| p[c]).sum::<f64>() / n;
    let mut data: Vec<Complex64> = positions.iter().map(|p| Complex64::new(p[c] - mean, 0.0)).collect();
    dft2_in_place(&mut data, n_u, n_v);
    data
}

/// Index of the frequency `(k_u, −k_v)`.
#[inline]
fn v_reflected(idx: usize, n_v: usize) -> usize {
    let (ku, kv) = (idx / n_v, idx % n_v);
    ku * n_v + (n_v - kv) % n_v
}

/// Mean-removed magnitude spectrum per coordinate channel, divided by n_u·n_v.
///
/// Each entry averages |X(k_u, k_v)| with |X(k_u, −k_v)|. For real input
/// |X(−k_u, k_v)| = |X(k_u, −k_v)|, so the average is unchanged when the grid
/// is mirrored along either axis.
pub fn descriptor_fft(positions: &[Vec3], n_u: usize, n_v: usize) -> Result<Descriptor> {
    check_grid(positions, n_u, n_v)?;
    let n = (n_u * n_v) as f64;
    let mut values = Vec::with_capacity(3 * positions.len());
    for c in 0..3 {
        let spec = channel_spectrum(positions, c, n_u, n_v);
        values.extend((0..spec.len()).map(|i| 0.5 * (spec[i].norm() + spec[v_reflected(i, n_v)].norm()) / n));
    }
    Ok(Descriptor { kind: DescriptorKind::Fft, values, layout: Layout::Spectral { n_u, n_v } })
}

/// Evaluates descriptor `kind`; `material` is only read by the energy descriptor.
pub fn evaluate(
    kind: DescriptorKind,
    positions: &[Vec3],
    constraints: &ConstraintSet,
    n_u: usize,
    n_v: usize,
) -> Result<Descriptor> {
    match kind {
        DescriptorKind::Pos => Ok(descriptor_pos(positions)),
        DescriptorKind::Strain => descriptor_strain(positions, constraints),
        DescriptorKind::Energy => descriptor_energy(positions, constraints, &constraints.material),
        DescriptorKind::Fft => descriptor_fft(positions, n_u, n_v),
    }
}

/// Precomputed linearization of a descriptor at fixed positions.
pub struct Linearization<'a> {
    kind: DescriptorKind,
    positions: &'a [Vec3],
    constraints: &'a ConstraintSet,
    n_u: usize,
    n_v: usize,
    spectra: Vec<Vec<Complex64>>,
    gradients: Vec<([Vec3; 2], [f64; 3])>,
    hinge_grads: Vec<(f64, [Vec3; 4])>,
}

impl<'a> Linearization<'a> {
    pub fn new(
        kind: DescriptorKind,
        positions: &'a [Vec3],
        constraints: &'a ConstraintSet,
        n_u: usize,
        n_v: usize,
    ) -> Result<Self> {
        let mut lin = Self {
            kind,
            positions,
            constraints,
            n_u,
            n_v,
            spectra: Vec::new(),
            gradients: Vec::new(),
            hinge_grads: Vec::new(),
        };
        match kind {
            DescriptorKind::Pos => {}
            DescriptorKind::Fft => {
                check_grid(positions, n_u, n_v)?;
                lin.spectra = (0..3).map(|c| channel_spectrum(positions, c, n_u, n_v)).collect();
            }
            DescriptorKind::Strain | DescriptorKind::Energy => {
                check_positions(positions, constraints)?;
                lin.gradients =
                    (0..constraints.triangles.len()).map(|t| triangle_strain(constraints, t, positions)).collect();
                lin.hinge_grads = (0..constraints.hinges.len())
                    .map(|h| {
                        let theta = hinge_angle(constraints, h, positions)?;
                        let x = constraints.hinges[h].vertices.map(|v| positions[v]);
                        Ok((theta, dihedral_gradient(&x)))
                    })
                    .collect::<Result<_>>()?;
            }
        }
        Ok(lin)
    }

    /// Directional derivative of the descriptor along `dx`.
    pub fn jvp(&self, dx: &[Vec3]) -> Result<Vec<f64>> {
        if dx.len() != self.positions.len() {
            return Err(Error::InvalidArgument(format!(
                "perturbation has {} vertices, expected {}",
                dx.len(),
                self.positions.len()
            )));
        }
        let cs = self.constraints;
        Ok(match self.kind {
            DescriptorKind::Pos => dx.iter().flatten().copied().collect(),
            DescriptorKind::Strain => {
                let mut out = Vec::with_capacity(cs.row_count());
                for (t, el) in cs.triangles.iter().enumerate() {
                    let fd = deformation_gradient(&el.vertices.map(|v| dx[v]), &el.weights);
                    out.extend(strain_rate(&self.gradients[t].0, &fd));
                }
                for (h, el) in cs.hinges.iter().enumerate() {
                    let g = &self.hinge_grads[h].1;
                    out.push((0..4).map(|i| dot(g[i], dx[el.vertices[i]])).sum());
                }
                out
            }
            DescriptorKind::Energy => {
                let k = cs.material.stiffness_block();
                let mut out = Vec::with_capacity(cs.triangles.len() + cs.hinges.len());
                for (t, el) in cs.triangles.iter().enumerate() {
                    let (f, c) = &self.gradients[t];
                    let fd = deformation_gradient(&el.vertices.map(|v| dx[v]), &el.weights);
                    out.push(el.area * quad_form(&k, *c, strain_rate(f, &fd)));
                }
                for (h, el) in cs.hinges.iter().enumerate() {
                    let (theta, g) = &self.hinge_grads[h];
                    let td: f64 = (0..4).map(|i| dot(g[i], dx[el.vertices[i]])).sum();
                    out.push(cs.material.b * theta * td);
                }
                out
            }
            DescriptorKind::Fft => {
                let n = (self.n_u * self.n_v) as f64;
                let mut out = Vec::with_capacity(3 * dx.len());
                for c in 0..3 {
                    let dspec = channel_spectrum(dx, c, self.n_u, self.n_v);
                    let dmag: Vec<f64> = self.spectra[c]
                        .iter()
                        .zip(&dspec)
                        .map(|(z, dz)| {
                            let mag = z.norm();
                            if mag > 0.0 {
                                (z.conj() * dz).re / mag
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    out.extend((0..dmag.len()).map(|i| 0.5 * (dmag[i] + dmag[v_reflected(i, self.n_v)]) / n));
                }
                out
            }
        })
    }

    /// Partial derivative with respect to γ_k at fixed positions.
    pub fn material_derivative(&self, k: usize) -> Vec<f64> {
        assert!(k < PARAM_COUNT);
        if self.kind != DescriptorKind::Energy {
            let len = match self.kind {
                DescriptorKind::Pos => 3 * self.positions.len(),
                DescriptorKind::Strain => self.constraints.row_count(),
                _ => 3 * self.n_u * self.n_v,
            };
            return vec![0.0; len];
        }
        let cs = self.constraints;
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
        let mut out: Vec<f64> = cs
            .triangles
            .iter()
            .enumerate()
            .map(|(t, el)| {
                let c = self.gradients[t].1;
                0.5 * el.area * quad_form(&e, c, c)
            })
            .collect();
        out.extend(self.hinge_grads.iter().map(|(theta, _)| if k == 4 { 0.5 * theta * theta } else { 0.0 }));
        out
    }
}

/// Descriptor differences for a set of materials, each simulated from two or
/// more initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    /// Δs_m between the first two initial conditions of each material.
    pub within: Vec<f64>,
    pub across: Vec<DeltaEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub material: usize,
    pub other: usize,
    pub i: usize,
    pub j: usize,
    /// Δs_{m,m2,i,j}.
    pub delta: f64,
    /// Δŝ = Δs_{m,m2,i,j} − Δs_m.
    pub relative: f64,
}

/// `states[m][i]` is the descriptor of material `m` from initial condition `i`.
pub fn descriptor_deltas(states: &[Vec<Descriptor>]) -> Result<DeltaTable> {
    let first =
        states.first().and_then(|s| s.first()).ok_or_else(|| Error::InvalidArgument("no descriptor states".into()))?;
    for (m, s) in states.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "material {m} has {} initial conditions, need at least 2",
                s.len()
            )));
        }
        for d in s {
            first.check_comparable(d)?;
        }
    }
    let within: Vec<f64> = states.iter().map(|s| s[0].distance(&s[1])).collect::<Result<_>>()?;
    let mut across = Vec::new();
    for (m, sm) in states.iter().enumerate() {
        for (m2, sm2) in states.iter().enumerate() {
            if m2 == m {
                continue;
            }
            for (i, a) in sm.iter().enumerate() {
                for (j, b) in sm2.iter().enumerate() {
                    let delta = a.distance(b)?;
                    across.push(DeltaEntry { material: m, other: m2, i, j, delta, relative: delta - within[m] });
                }
            }
        }
    }
    Ok(DeltaTable { within, across })
}
