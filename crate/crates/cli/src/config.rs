//! Run configuration. One TOML file per run; all units CGS.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clothfit::descriptor::DescriptorKind;
use clothfit::estimate::{Bounds, LmSettings};
use clothfit::material::{compliance_from_engineering, EngineeringParams};
use clothfit::scenario::{InitialCondition, ScenarioSpec};
use clothfit::xpbd::{SolverSettings, SweepMode};
use clothfit::MaterialParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20240601;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it by name.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; relative paths resolve against the working directory.
    pub output_dir: Option<PathBuf>,
    /// Solver used for equilibrium solves.
    #[serde(default)]
    pub solver: SolverSettings,
    /// Per-scenario solver changes, keyed by scenario name.
    #[serde(default)]
    pub overrides: BTreeMap<String, SolverOverride>,
    pub material: Option<MaterialSpec>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    pub estimate: Option<EstimateSection>,
    pub descriptors: Option<DescriptorSection>,
    pub gradcheck: Option<GradcheckSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverride {
    /// s.
    pub dt: Option<f64>,
    pub iterations: Option<usize>,
    pub max_steps: Option<usize>,
    /// cm.
    pub pos_tol: Option<f64>,
    pub mode: Option<SweepMode>,
}

impl SolverOverride {
    pub fn apply(&self, base: &SolverSettings) -> SolverSettings {
        SolverSettings {
            dt: self.dt.unwrap_or(base.dt),
            iterations: self.iterations.unwrap_or(base.iterations),
            max_steps: self.max_steps.unwrap_or(base.max_steps),
            pos_tol: self.pos_tol.unwrap_or(base.pos_tol),
            mode: self.mode.unwrap_or(base.mode),
            ..base.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Cotton,
    Denim,
    Silk,
    CottonInitial,
}

impl Preset {
    fn params(self) -> MaterialParams {
        match self {
            Self::Cotton => MaterialParams::cotton(),
            Self::Denim => MaterialParams::denim(),
            Self::Silk => MaterialParams::silk(),
            Self::CottonInitial => MaterialParams::cotton_initial(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Cotton => "cotton",
            Self::Denim => "denim",
            Self::Silk => "silk",
            Self::CottonInitial => "cotton_initial",
        }
    }
}

/// Compliance coefficients: c00, c11, c01, c22 in dyn/cm, b in dyn·cm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compliance {
    pub c00: f64,
    pub c11: f64,
    pub c01: f64,
    pub c22: f64,
    pub b: f64,
}

/// Exactly one of `preset`, `engineering`, or `compliance`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub label: Option<String>,
    pub preset: Option<Preset>,
    /// Moduli in dyn/cm, ν_uv dimensionless, b in dyn·cm.
    pub engineering: Option<EngineeringParams>,
    pub compliance: Option<Compliance>,
    /// Area density, g/cm². Required unless a preset supplies it.
    pub rho: Option<f64>,
}

impl MaterialSpec {
    pub fn preset(p: Preset) -> Self {
        Self { preset: Some(p), ..Default::default() }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.preset {
            Some(p) => p.name().into(),
            None => "material".into(),
        }
    }

    pub fn resolve(&self, what: &str) -> Result<MaterialParams, CliError> {
        let given = [self.preset.is_some(), self.engineering.is_some(), self.compliance.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(CliError::Config(format!("{what}: set exactly one of `preset`, `engineering`, `compliance`")));
        }
        let m = if let Some(p) = self.preset {
            let base = p.params();
            match self.rho {
                Some(rho) => MaterialParams { rho, ..base },
                None => base,
            }
        } else {
            let rho = self.rho.ok_or_else(|| CliError::Config(format!("{what}.rho: required without a preset")))?;
            if let Some(e) = &self.engineering {
                compliance_from_engineering(e, rho).map_err(|e| CliError::Config(format!("{what}.engineering: {e}")))?
            } else {
                let c = self.compliance.expect("checked above");
                MaterialParams { c00: c.c00, c11: c.c11, c01: c.c01, c22: c.c22, b: c.b, rho }
            }
        };
        m.validate().map_err(|e| CliError::Config(format!("{what}: {e}")))?;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lm,
    MultiStart,
    Alternating,
}

fn default_descriptor() -> DescriptorKind {
    DescriptorKind::Fft
}
fn default_true() -> bool {
    true
}
fn default_residual_steps() -> usize {
    60
}
fn default_starts() -> usize {
    8
}
fn default_rounds() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    /// Target directories written by `make-targets`, relative to the config file.
    #[serde(default)]
    pub targets: Vec<PathBuf>,
    /// Generates targets from `scenarios` in-process instead.
    pub truth: Option<MaterialSpec>,
    /// Start point for `lm` and `alternating`.
    pub start: Option<MaterialSpec>,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_descriptor")]
    pub descriptor: DescriptorKind,
    #[serde(default = "default_true")]
    pub use_forces: bool,
    /// Fixed force-row weight; balanced at the start when unset.
    pub force_weight: Option<f64>,
    /// Quasi-static steps inside the residual.
    #[serde(default = "default_residual_steps")]
    pub residual_steps: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Scenario names fitted in the bending pass; the rest form the membrane pass.
    #[serde(default)]
    pub bending: Vec<String>,
    pub bounds: Option<Bounds>,
    pub s_nu: Option<f64>,
    #[serde(default)]
    pub lm: LmSettings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorSection {
    pub materials: Vec<MaterialSpec>,
    /// Defaults to flat plus one perturbation seeded from the root seed.
    #[serde(default)]
    pub initial: Vec<InitialCondition>,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<DescriptorKind>,
}

fn all_kinds() -> Vec<DescriptorKind> {
    DescriptorKind::ALL.to_vec()
}

fn default_draws() -> usize {
    10
}
fn default_rel_step() -> f64 {
    1e-5
}
fn default_floor() -> f64 {
    1e-6
}
fn default_tolerance() -> f64 {
    1e-3
}
fn default_check_steps() -> usize {
    20
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    /// Material that generates the targets.
    pub truth: MaterialSpec,
    /// Explicit γ = [c00, c11, c01, c22, b] points; random draws when empty.
    #[serde(default)]
    pub gammas: Vec<[f64; 5]>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_descriptor")]
    pub descriptor: DescriptorKind,
    #[serde(default = "default_check_steps")]
    pub residual_steps: usize,
    #[serde(default = "default_rel_step")]
    pub rel_step: f64,
    #[serde(default = "default_floor")]
    pub abs_floor: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.solver.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        let mut seen = std::collections::HashSet::new();
        for s in &cfg.scenarios {
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::Config(format!("scenarios: duplicate name `{}`", s.name)));
            }
        }
        for (name, o) in &cfg.overrides {
            if !seen.contains(name.as_str()) {
                return Err(CliError::Config(format!("overrides.{name}: no scenario has this name")));
            }
            o.apply(&cfg.solver).validate().map_err(|e| CliError::Config(format!("overrides.{name}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Solver for one scenario after its override.
    pub fn solver_for(&self, scenario: &str) -> SolverSettings {
        match self.overrides.get(scenario) {
            Some(o) => o.apply(&self.solver),
            None => self.solver.clone(),
        }
    }

    pub fn require_scenarios(&self) -> Result<(), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("scenarios: at least one `[[scenarios]]` entry is required".into()));
        }
        Ok(())
    }

    pub fn material(&self) -> Result<MaterialParams, CliError> {
        self.material
            .as_ref()
            .ok_or_else(|| CliError::Config("material: section is required".into()))?
            .resolve("material")
    }

    /// Fills seed-dependent defaults so the echoed config reproduces the run.
    pub fn resolve_defaults(&mut self) {
        if let Some(d) = &mut self.descriptors {
            if d.initial.is_empty() {
                d.initial =
                    vec![InitialCondition::Flat, InitialCondition::Perturbed { seed: self.seed, amplitude: None }];
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot echo config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.solver, SolverSettings::default());
    }

    #[test]
    fn unknown_field_is_named() {
        let e = RunConfig::parse("[solver]\ndtt = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("dtt"), "{e}");
    }

    #[test]
    fn material_needs_exactly_one_form() {
        let m = MaterialSpec { preset: Some(Preset::Silk), rho: Some(0.05), ..Default::default() };
        assert_eq!(m.resolve("m").unwrap().rho, 0.05);
        assert!(MaterialSpec::default().resolve("m").is_err());
        let both = MaterialSpec {
            preset: Some(Preset::Silk),
            engineering: Some(EngineeringParams::silk()),
            ..Default::default()
        };
        assert!(both.resolve("m").is_err());
        let eng = MaterialSpec { engineering: Some(EngineeringParams::denim()), ..Default::default() };
        assert!(eng.resolve("m").unwrap_err().to_string().contains("rho"));
    }

    #[test]
    fn overrides_apply_per_scenario() {
        let cfg = RunConfig::parse(
            r#"
            [[scenarios]]
            name = "pull"
            kind = "edge_pull"
            [overrides.pull]
            dt = 0.001
            "#,
        )
        .unwrap();
        assert_eq!(cfg.solver_for("pull").dt, 0.001);
        assert_eq!(cfg.solver_for("other").dt, SolverSettings::default().dt);
        assert!(RunConfig::parse("[overrides.ghost]\ndt = 0.1\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::parse(
            r#"
            seed = 7
            [material]
            preset = "denim"
            [[scenarios]]
            name = "f"
            kind = "picture_frame"
            initial = { type = "perturbed", seed = 3 }
            [descriptors]
            materials = [{ preset = "cotton" }]
            "#,
        )
        .unwrap();
        cfg.resolve_defaults();
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again.seed, 7);
        assert_eq!(again.scenarios, cfg.scenarios);
        assert_eq!(again.descriptors.unwrap().initial.len(), 2);
    }
}
