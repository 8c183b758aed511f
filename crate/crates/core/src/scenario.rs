//! Canonical swatch experiments: picture-frame shear, edge and corner pulls,
//! and a ledge drape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::MaterialParams;
use crate::math::Vec3;
use crate::mesh::{make_grid, GridMesh};
use crate::xpbd::{
    boundary_forces, quasi_static_solve, Attachment, BoundaryConditions, ConstraintSet, SolverSettings, GRAVITY,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PictureFrame,
    CornerPull,
    EdgePull,
    Drape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PullAxis {
    U,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialCondition {
    Flat,
    /// Uniform noise in `[-amplitude, amplitude]` cm on every coordinate of
    /// every free vertex. Amplitude defaults to 1% of the longer side.
    Perturbed {
        seed: u64,
        amplitude: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub n_u: usize,
    pub n_v: usize,
    /// cm.
    pub side_u: f64,
    /// cm.
    pub side_v: f64,
    /// Picture-frame hinge angle, degrees.
    pub shear_deg: f64,
    /// Edge-pull direction.
    pub axis: PullAxis,
    /// Weight hung on each clamp, grams.
    pub weight_g: f64,
    /// Clamp patch depth in vertices.
    pub clamp_depth: usize,
    /// Fraction of the swatch hanging past the ledge.
    pub overhang: f64,
    /// Gravity on or off; defaults per kind (on for picture frame and drape).
    pub gravity: Option<bool>,
    pub initial: InitialCondition,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            kind: ScenarioKind::PictureFrame,
            n_u: 33,
            n_v: 33,
            side_u: 15.0,
            side_v: 15.0,
            shear_deg: 30.0,
            axis: PullAxis::U,
            weight_g: 200.0,
            clamp_depth: 2,
            overhang: 0.4,
            gravity: None,
            initial: InitialCondition::Flat,
        }
    }
}

impl ScenarioSpec {
    pub fn picture_frame(n: usize, side: f64, shear_deg: f64) -> Self {
        Self {
            name: format!("frame_{shear_deg}"),
            kind: ScenarioKind::PictureFrame,
            n_u: n,
            n_v: n,
            side_u: side,
            side_v: side,
            shear_deg,
            ..Default::default()
        }
    }

    pub fn edge_pull(n: usize, side: f64, axis: PullAxis, weight_g: f64) -> Self {
        Self {
            name: format!("pull_{axis:?}").to_lowercase(),
            kind: ScenarioKind::EdgePull,
            n_u: n,
            n_v: n,
            side_u: side,
            side_v: side,
            axis,
            weight_g,
            ..Default::default()
        }
    }

    pub fn corner_pull(n: usize, side: f64, weight_g: f64) -> Self {
        Self {
            name: "corner_pull".into(),
            kind: ScenarioKind::CornerPull,
            n_u: n,
            n_v: n,
            side_u: side,
            side_v: side,
            weight_g,
            ..Default::default()
        }
    }

    pub fn drape(n: usize, side: f64, overhang: f64) -> Self {
        Self {
            name: format!("drape_{overhang}"),
            kind: ScenarioKind::Drape,
            n_u: n,
            n_v: n,
            side_u: side,
            side_v: side,
            overhang,
            ..Default::default()
        }
    }

    pub fn with_initial(mut self, initial: InitialCondition) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn gravity_on(&self) -> bool {
        self.gravity.unwrap_or(matches!(self.kind, ScenarioKind::PictureFrame | ScenarioKind::Drape))
    }
}

/// A built experiment: the swatch at its initial positions plus boundary conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub mesh: GridMesh,
    pub bc: BoundaryConditions,
}

fn config(msg: String) -> Error {
    Error::Config(msg)
}

fn clamp_load(set: &[usize], total: Vec3) -> Vec<(usize, Vec3)> {
    let share = 1.0 / set.len() as f64;
    set.iter().map(|&v| (v, total.map(|c| c * share))).collect()
}

fn check_disjoint(sets: &[&Attachment]) -> Result<()> {
    let mut seen = std::collections::HashMap::new();
    for a in sets {
        for &v in &a.vertices {
            if let Some(prev) = seen.insert(v, &a.name) {
                return Err(config(format!("clamps `{prev}` and `{}` overlap at vertex {v}", a.name)));
            }
        }
    }
    Ok(())
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let mut mesh = make_grid(spec.n_u, spec.n_v, spec.side_u, spec.side_v).map_err(|e| config(e.to_string()))?;
    let (n_u, n_v) = (spec.n_u, spec.n_v);
    let idx = |i: usize, j: usize| i * n_v + j;
    let gravity = if spec.gravity_on() { [0.0, 0.0, -GRAVITY] } else { [0.0; 3] };
    let mut pinned: Vec<(usize, Vec3)> = Vec::new();
    let mut loads = Vec::new();
    let mut attachments = Vec::new();

    match spec.kind {
        ScenarioKind::PictureFrame => {
            if !spec.shear_deg.is_finite() || spec.shear_deg.abs() >= 80.0 {
                return Err(config(format!("shear_deg must lie in (-80, 80), got {}", spec.shear_deg)));
            }
            let (s, c) = spec.shear_deg.to_radians().sin_cos();
            for (p, uv) in mesh.positions.iter_mut().zip(&mesh.rest_uv) {
                *p = [uv[0] + uv[1] * s, uv[1] * c, 0.0];
            }
            let sides: [(&str, Vec<usize>); 4] = [
                ("v0", (0..n_u).map(|i| idx(i, 0)).collect()),
                ("v1", (0..n_u).map(|i| idx(i, n_v - 1)).collect()),
                ("u0", (1..n_v - 1).map(|j| idx(0, j)).collect()),
                ("u1", (1..n_v - 1).map(|j| idx(n_u - 1, j)).collect()),
            ];
            for (name, vertices) in sides {
                if vertices.is_empty() {
                    continue;
                }
                pinned.extend(vertices.iter().map(|&v| (v, mesh.positions[v])));
                attachments.push(Attachment { name: name.into(), vertices });
            }
        }
        ScenarioKind::EdgePull | ScenarioKind::CornerPull => {
            let k = spec.clamp_depth;
            if k == 0 {
                return Err(config("clamp_depth must be at least 1".into()));
            }
            if !(spec.weight_g >= 0.0) || !spec.weight_g.is_finite() {
                return Err(config(format!("weight_g must be non-negative, got {}", spec.weight_g)));
            }
            let force = spec.weight_g * GRAVITY;
            let (a, b, dir): (Vec<usize>, Vec<usize>, Vec3) = match (spec.kind, spec.axis) {
                (ScenarioKind::EdgePull, PullAxis::U) => (
                    (0..k.min(n_u)).flat_map(|i| (0..n_v).map(move |j| idx(i, j))).collect(),
                    (n_u.saturating_sub(k)..n_u).flat_map(|i| (0..n_v).map(move |j| idx(i, j))).collect(),
                    [1.0, 0.0, 0.0],
                ),
                (ScenarioKind::EdgePull, PullAxis::V) => (
                    (0..n_u).flat_map(|i| (0..k.min(n_v)).map(move |j| idx(i, j))).collect(),
                    (0..n_u).flat_map(|i| (n_v.saturating_sub(k)..n_v).map(move |j| idx(i, j))).collect(),
                    [0.0, 1.0, 0.0],
                ),
                _ => {
                    let d = [spec.side_u, spec.side_v, 0.0];
                    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    (
                        (0..k.min(n_u)).flat_map(|i| (0..k.min(n_v)).map(move |j| idx(i, j))).collect(),
                        (n_u.saturating_sub(k)..n_u)
                            .flat_map(|i| (n_v.saturating_sub(k)..n_v).map(move |j| idx(i, j)))
                            .collect(),
                        [d[0] / len, d[1] / len, 0.0],
                    )
                }
            };
            let first = Attachment { name: "clamp0".into(), vertices: a };
            let second = Attachment { name: "clamp1".into(), vertices: b };
            check_disjoint(&[&first, &second])?;
            loads.extend(clamp_load(&first.vertices, dir.map(|c| -c * force)));
            loads.extend(clamp_load(&second.vertices, dir.map(|c| c * force)));
            // hold the centre to remove rigid drift
            let centre = idx(n_u / 2, n_v / 2);
            if first.vertices.contains(&centre) || second.vertices.contains(&centre) {
                return Err(config("clamps cover the swatch centre".into()));
            }
            pinned.push((centre, mesh.positions[centre]));
            attachments.push(first);
            attachments.push(second);
        }
        ScenarioKind::Drape => {
            if !(spec.overhang > 0.0 && spec.overhang <= 1.0) {
                return Err(config(format!("overhang must lie in (0, 1], got {}", spec.overhang)));
            }
            let hanging = ((spec.overhang * (n_u - 1) as f64).round() as usize).clamp(1, n_u - 1);
            let rows = n_u - hanging;
            let vertices: Vec<usize> = (0..rows).flat_map(|i| (0..n_v).map(move |j| idx(i, j))).collect();
            pinned.extend(vertices.iter().map(|&v| (v, mesh.positions[v])));
            attachments.push(Attachment { name: "ledge".into(), vertices });
        }
    }

    if let InitialCondition::Perturbed { seed, amplitude } = spec.initial {
        let amp = amplitude.unwrap_or(0.01 * spec.side_u.max(spec.side_v));
        if !(amp >= 0.0) || !amp.is_finite() {
            return Err(config(format!("perturbation amplitude must be non-negative, got {amp}")));
        }
        let mut fixed = vec![false; mesh.vertex_count()];
        for &(v, _) in &pinned {
            fixed[v] = true;
        }
        let mut rng = crate::rng::stream(seed, "initial-perturbation");
        for (v, p) in mesh.positions.iter_mut().enumerate() {
            let noise: Vec3 = std::array::from_fn(|_| if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 });
            if !fixed[v] {
                for c in 0..3 {
                    p[c] += noise[c];
                }
            }
        }
    }

    let bc = BoundaryConditions { pinned, loads, gravity, attachments };
    bc.validate(mesh.vertex_count())?;
    Ok(Scenario { spec: spec.clone(), mesh, bc })
}

/// Equilibrium shape and clamp forces of a scenario, with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBundle {
    pub spec: ScenarioSpec,
    pub material: MaterialParams,
    pub settings: SolverSettings,
    pub positions: Vec<Vec3>,
    pub attachment_names: Vec<String>,
    /// dyn, one per attachment.
    pub forces: Vec<f64>,
    pub steps: usize,
    pub final_delta: f64,
}

impl TargetBundle {
    pub fn mesh(&self) -> Result<GridMesh> {
        make_grid(self.spec.n_u, self.spec.n_v, self.spec.side_u, self.spec.side_v)?
            .with_positions(self.positions.clone())
    }
}

/// Solves the scenario to equilibrium. Refuses to emit an unconverged target.
pub fn make_targets(scenario: &Scenario, material: &MaterialParams, settings: &SolverSettings) -> Result<TargetBundle> {
    let cs = ConstraintSet::new(&scenario.mesh, *material)?;
    let result = quasi_static_solve(&scenario.mesh, &cs, &scenario.bc, settings)?;
    if !result.converged {
        return Err(Error::NotConverged(format!(
            "scenario `{}` still moving {:.3e} cm after {} steps (pos_tol {:.1e})",
            scenario.spec.name, result.final_delta, result.steps, settings.pos_tol
        )));
    }
    let forces = boundary_forces(&result.state, &cs, settings.dt, &scenario.bc.attachment_sets())?;
    Ok(TargetBundle {
        spec: scenario.spec.clone(),
        material: *material,
        settings: settings.clone(),
        positions: result.state.positions,
        attachment_names: scenario.bc.attachments.iter().map(|a| a.name.clone()).collect(),
        forces,
        steps: result.steps,
        final_delta: result.final_delta,
    })
}
