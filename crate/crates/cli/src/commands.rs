use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clothfit::descriptor::{descriptor_deltas, evaluate};
use clothfit::estimate::{
    alternating_passes, lm_solve, multi_start, EstimationProblem, EstimationResult, ScenarioTarget,
};
use clothfit::material::{engineering_from_compliance, PARAM_NAMES};
use clothfit::mesh::save_obj;
use clothfit::scenario::{build_scenario, make_targets, ScenarioSpec, TargetBundle};
use clothfit::sensitivity::{gradcheck, gradcheck_draws};
use clothfit::xpbd::{boundary_forces, quasi_static_solve, ConstraintSet, SolverSettings};
use clothfit::MaterialParams;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimateSection, MaterialSpec, Method, Preset, RunConfig};
use crate::error::{io_err, CliError};
use crate::output::{to_toml, write_csv, OutputDir};

/// A loaded config plus where it came from.
pub struct Run {
    pub config: RunConfig,
    /// Directory of the config file; relative target paths resolve here.
    pub base: PathBuf,
    pub out: OutputDir,
}

impl Run {
    fn echo_config(&self) -> Result<(), CliError> {
        self.out.write("config.toml", &self.config.to_toml()?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct DiagnosticsRow<'a> {
    scenario: &'a str,
    converged: bool,
    steps: usize,
    final_delta_cm: f64,
    skipped_triangles: usize,
    skipped_hinges: usize,
    attachment: &'a str,
    force_dyn: f64,
}

#[derive(Serialize)]
struct StepRow<'a> {
    scenario: &'a str,
    step: usize,
    delta_cm: f64,
}

pub fn simulate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    cfg.require_scenarios()?;
    let material = cfg.material()?;
    run.echo_config()?;

    let solved: Vec<_> = cfg
        .scenarios
        .par_iter()
        .map(|spec| -> Result<_, CliError> {
            let scenario = build_scenario(spec)?;
            let settings = cfg.solver_for(&spec.name);
            let cs = ConstraintSet::new(&scenario.mesh, material)?;
            let result = quasi_static_solve(&scenario.mesh, &cs, &scenario.bc, &settings)?;
            let forces = boundary_forces(&result.state, &cs, settings.dt, &scenario.bc.attachment_sets())?;
            Ok((scenario, result, forces))
        })
        .collect::<Result<_, _>>()?;

    let mut diagnostics = Vec::new();
    let mut steps = Vec::new();
    let mut unconverged = Vec::new();
    for (scenario, result, forces) in &solved {
        let name = scenario.spec.name.as_str();
        let mesh = scenario.mesh.with_positions(result.state.positions.clone())?;
        save_obj(&mesh, run.out.path(format!("{name}.obj")))?;
        for (a, f) in scenario.bc.attachments.iter().zip(forces) {
            diagnostics.push(DiagnosticsRow {
                scenario: name,
                converged: result.converged,
                steps: result.steps,
                final_delta_cm: result.final_delta,
                skipped_triangles: result.diagnostics.skipped_triangles,
                skipped_hinges: result.diagnostics.skipped_hinges,
                attachment: &a.name,
                force_dyn: *f,
            });
        }
        steps.extend(result.deltas.iter().enumerate().map(|(k, &d)| StepRow {
            scenario: name,
            step: k + 1,
            delta_cm: d,
        }));
        run.out.note(format!(
            "{name}: {} after {} steps (last move {:.2e} cm)",
            if result.converged { "converged" } else { "not converged" },
            result.steps,
            result.final_delta
        ));
        if !result.converged {
            unconverged.push(name.to_string());
        }
    }
    run.out.csv("diagnostics.csv", &diagnostics)?;
    run.out.csv("steps.csv", &steps)?;
    if !unconverged.is_empty() {
        return Err(CliError::Failed(format!("not converged: {}", unconverged.join(", "))));
    }
    Ok(())
}

#[derive(Serialize)]
struct ForceRow<'a> {
    attachment: &'a str,
    force_dyn: f64,
}

fn generate_bundles(cfg: &RunConfig, truth: &MaterialParams) -> Result<Vec<TargetBundle>, CliError> {
    cfg.require_scenarios()?;
    cfg.scenarios
        .par_iter()
        .map(|spec| Ok(make_targets(&build_scenario(spec)?, truth, &cfg.solver_for(&spec.name))?))
        .collect()
}

fn save_bundle(dir: &Path, bundle: &TargetBundle) -> Result<(), CliError> {
    save_obj(&bundle.mesh()?, dir.join("target.obj"))?;
    std::fs::write(dir.join("bundle.toml"), to_toml(bundle)?).map_err(io_err(dir.display()))?;
    let rows: Vec<_> = bundle
        .attachment_names
        .iter()
        .zip(&bundle.forces)
        .map(|(a, &f)| ForceRow { attachment: a, force_dyn: f })
        .collect();
    write_csv(&dir.join("forces.csv"), &rows)
}

pub fn make_targets_cmd(run: &Run) -> Result<(), CliError> {
    let truth = run.config.material()?;
    run.echo_config()?;
    let bundles = generate_bundles(&run.config, &truth)?;
    for b in &bundles {
        let dir = run.out.subdir(Path::new("targets").join(&b.spec.name))?;
        save_bundle(&dir, b)?;
        run.out.note(format!("{}: target after {} steps -> {}", b.spec.name, b.steps, dir.display()));
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<TargetBundle, CliError> {
    let path = dir.join("bundle.toml");
    let text = std::fs::read_to_string(&path).map_err(io_err(path.display()))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Start material with the targets' area density.
fn start_material(spec: Option<&MaterialSpec>, rho: f64) -> Result<MaterialParams, CliError> {
    let spec = spec.cloned().unwrap_or_else(|| MaterialSpec::preset(Preset::CottonInitial));
    let with_rho = MaterialSpec { rho: Some(rho), ..spec };
    with_rho.resolve("estimate.start")
}

fn residual_target(
    bundle: &TargetBundle,
    est: &EstimateSection,
    settings: &SolverSettings,
) -> Result<ScenarioTarget, CliError> {
    let mut t = ScenarioTarget::from_bundle(bundle, est.descriptor)?.with_settings(SolverSettings {
        max_steps: est.residual_steps,
        pos_tol: 0.0,
        ..settings.clone()
    });
    if !est.use_forces {
        t = t.without_forces();
    }
    t.force_weight = est.force_weight;
    Ok(t)
}

fn problem_from(targets: Vec<ScenarioTarget>, rho: f64, est: &EstimateSection) -> EstimationProblem {
    let mut p = EstimationProblem::new(targets, rho);
    if let Some(b) = est.bounds {
        p.bounds = b;
    }
    if let Some(s) = est.s_nu {
        p.s_nu = s;
    }
    p.lm = est.lm.clone();
    p
}

#[derive(Serialize)]
struct HistoryRow {
    start: usize,
    iteration: usize,
    objective: f64,
}

pub fn estimate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let est = cfg.estimate.as_ref().ok_or_else(|| CliError::Config("estimate: section is required".into()))?;
    if est.residual_steps == 0 {
        return Err(CliError::Config("estimate.residual_steps: must be at least 1".into()));
    }
    let truth = est.truth.as_ref().map(|t| t.resolve("estimate.truth")).transpose()?;
    let bundles = match (&truth, est.targets.is_empty()) {
        (Some(_), false) => {
            return Err(CliError::Config("estimate: set either `targets` or `truth`, not both".into()));
        }
        (None, true) => return Err(CliError::Config("estimate: set `targets` or `truth`".into())),
        (Some(t), true) => generate_bundles(cfg, t)?,
        (None, false) => est.targets.iter().map(|d| load_bundle(&run.base.join(d))).collect::<Result<_, _>>()?,
    };
    let rho = bundles[0].material.rho;
    if let Some(b) = bundles.iter().find(|b| b.material.rho != rho) {
        return Err(CliError::Config(format!(
            "estimate.targets: `{}` has rho {} but `{}` has {rho}",
            b.spec.name, b.material.rho, bundles[0].spec.name
        )));
    }
    for name in &est.bending {
        if !bundles.iter().any(|b| &b.spec.name == name) {
            return Err(CliError::Config(format!("estimate.bending: no target named `{name}`")));
        }
    }
    let start = start_material(est.start.as_ref(), rho)?;
    run.echo_config()?;

    let targets: Vec<(String, ScenarioTarget)> = bundles
        .iter()
        .map(|b| {
            let settings = match cfg.overrides.get(&b.spec.name) {
                Some(o) => o.apply(&b.settings),
                None => b.settings.clone(),
            };
            Ok((b.spec.name.clone(), residual_target(b, est, &settings)?))
        })
        .collect::<Result<_, CliError>>()?;
    run.out.note(format!("fitting {} scenarios with {:?}", targets.len(), est.method));

    let result = match est.method {
        Method::Lm => lm_solve(&problem_from(targets.into_iter().map(|t| t.1).collect(), rho, est), &start)?,
        Method::MultiStart => {
            let problem = problem_from(targets.into_iter().map(|t| t.1).collect(), rho, est);
            multi_start(&problem, est.starts, cfg.seed)?
        }
        Method::Alternating => {
            if est.bending.is_empty() {
                return Err(CliError::Config("estimate.bending: alternating needs at least one scenario name".into()));
            }
            let (bend, memb): (Vec<_>, Vec<_>) = targets.into_iter().partition(|(n, _)| est.bending.contains(n));
            if memb.is_empty() {
                return Err(CliError::Config("estimate.bending: every scenario is in the bending pass".into()));
            }
            let bend = problem_from(bend.into_iter().map(|t| t.1).collect(), rho, est);
            let memb = problem_from(memb.into_iter().map(|t| t.1).collect(), rho, est);
            alternating_passes(&bend, &memb, &start, est.rounds)?
        }
    };

    run.out.write("report.txt", &report(&result, truth.as_ref()))?;
    run.out.write("result.toml", &to_toml(&result)?)?;
    let history: Vec<_> = result
        .history
        .iter()
        .flat_map(|h| {
            h.objectives.iter().enumerate().map(move |(k, &o)| HistoryRow {
                start: h.start,
                iteration: k,
                objective: o,
            })
        })
        .collect();
    run.out.csv("history.csv", &history)?;
    run.out.note(format!("objective {:.3e} after {} iterations", result.objective, result.iterations));
    if !result.converged {
        return Err(CliError::Failed(format!("estimate did not converge (stop reason {:?})", result.stop_reason)));
    }
    Ok(())
}

fn report(result: &EstimationResult, truth: Option<&MaterialParams>) -> String {
    let mut s = String::new();
    let g = result.gamma_star.gamma();
    let _ = writeln!(s, "converged: {}", result.converged);
    if let Some(r) = result.stop_reason {
        let _ = writeln!(s, "stop reason: {r:?}");
    }
    let _ = writeln!(s, "iterations: {}", result.iterations);
    let _ = writeln!(s, "objective: {:.6e}", result.objective);
    let _ = writeln!(s, "wall time: {:.2} s", result.wall_time_s);
    let _ = writeln!(s, "\ncompliance parameters");
    let want = truth.map(|t| t.gamma());
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let _ = write!(s, "  {name:<4} = {:.6e}", g[k]);
        if let Some(w) = want {
            let _ =
                write!(s, "  (truth {:.6e}, rel. error {:.2e})", w[k], (g[k] - w[k]).abs() / w[k].abs().max(1e-300));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "\nengineering parameters");
    match result.engineering.or_else(|| engineering_from_compliance(&result.gamma_star).ok()) {
        Some(e) => {
            let _ = writeln!(s, "  E_u  = {:.6e} dyn/cm", e.e_u);
            let _ = writeln!(s, "  E_v  = {:.6e} dyn/cm", e.e_v);
            let _ = writeln!(s, "  mu   = {:.6e} dyn/cm", e.mu);
            let _ = writeln!(s, "  nu   = {:.6}", e.nu);
            let _ = writeln!(s, "  b    = {:.6e} dyn cm", e.b);
        }
        None => {
            let _ = writeln!(s, "  membrane block is not positive definite");
        }
    }
    if !result.force_weights.is_empty() {
        let _ = writeln!(s, "\nforce weights: {:?}", result.force_weights);
    }
    s
}

#[derive(Serialize)]
struct WithinRow<'a> {
    scenario: &'a str,
    descriptor: &'static str,
    material: &'a str,
    within: f64,
}

#[derive(Serialize)]
struct DeltaRow<'a> {
    scenario: &'a str,
    descriptor: &'static str,
    material: &'a str,
    other: &'a str,
    i: usize,
    j: usize,
    delta: f64,
    relative: f64,
}

pub fn descriptors(run: &Run) -> Result<(), CliError> {
    let mut cfg = run.config.clone();
    cfg.resolve_defaults();
    cfg.require_scenarios()?;
    let sec = cfg.descriptors.as_ref().ok_or_else(|| CliError::Config("descriptors: section is required".into()))?;
    if sec.materials.len() < 2 {
        return Err(CliError::Config("descriptors.materials: need at least two materials".into()));
    }
    if sec.initial.len() < 2 {
        return Err(CliError::Config("descriptors.initial: need at least two initial conditions".into()));
    }
    let materials: Vec<(String, MaterialParams)> = sec
        .materials
        .iter()
        .enumerate()
        .map(|(m, spec)| Ok((spec.label(), spec.resolve(&format!("descriptors.materials[{m}]"))?)))
        .collect::<Result<_, CliError>>()?;
    run.out.write("config.toml", &cfg.to_toml()?)?;

    let mut within_rows = Vec::new();
    let mut delta_rows = Vec::new();
    let mut unconverged = Vec::new();
    for spec in &cfg.scenarios {
        let settings = cfg.solver_for(&spec.name);
        let jobs: Vec<(usize, usize)> =
            (0..materials.len()).flat_map(|m| (0..sec.initial.len()).map(move |i| (m, i))).collect();
        let solved: Vec<_> = jobs
            .par_iter()
            .map(|&(m, i)| -> Result<_, CliError> {
                let s: ScenarioSpec = spec.clone().with_initial(sec.initial[i]);
                let scenario = build_scenario(&s)?;
                let cs = ConstraintSet::new(&scenario.mesh, materials[m].1)?;
                let r = quasi_static_solve(&scenario.mesh, &cs, &scenario.bc, &settings)?;
                Ok((r, cs))
            })
            .collect::<Result<_, _>>()?;
        for ((m, i), (r, _)) in jobs.iter().zip(&solved) {
            if !r.converged {
                unconverged.push(format!("{} / {} / initial {i}", spec.name, materials[*m].0));
            }
        }
        for &kind in &sec.kinds {
            let states: Vec<Vec<_>> = (0..materials.len())
                .map(|m| {
                    (0..sec.initial.len())
                        .map(|i| {
                            let (r, cs) = &solved[m * sec.initial.len() + i];
                            evaluate(kind, &r.state.positions, cs, spec.n_u, spec.n_v)
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<_, _>>()?;
            let table = descriptor_deltas(&states)?;
            for (m, &w) in table.within.iter().enumerate() {
                within_rows.push(WithinRow {
                    scenario: &spec.name,
                    descriptor: kind.name(),
                    material: &materials[m].0,
                    within: w,
                });
            }
            for e in &table.across {
                delta_rows.push(DeltaRow {
                    scenario: &spec.name,
                    descriptor: kind.name(),
                    material: &materials[e.material].0,
                    other: &materials[e.other].0,
                    i: e.i,
                    j: e.j,
                    delta: e.delta,
                    relative: e.relative,
                });
            }
            let positive = table.across.iter().filter(|e| e.relative > 0.0).count();
            run.out.note(format!(
                "{} {}: {positive}/{} cross-material differences exceed the within-material spread",
                spec.name,
                kind.name(),
                table.across.len()
            ));
        }
    }
    run.out.csv("within.csv", &within_rows)?;
    run.out.csv("deltas.csv", &delta_rows)?;
    if !unconverged.is_empty() {
        return Err(CliError::Failed(format!("not converged: {}", unconverged.join(", "))));
    }
    Ok(())
}

#[derive(Serialize)]
struct GradRow {
    draw: usize,
    parameter: &'static str,
    gamma: f64,
    analytic_norm: f64,
    fd_norm: f64,
    rel_error: f64,
    pass: bool,
}

pub fn gradcheck_cmd(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let sec = cfg.gradcheck.as_ref().ok_or_else(|| CliError::Config("gradcheck: section is required".into()))?;
    if sec.residual_steps == 0 {
        return Err(CliError::Config("gradcheck.residual_steps: must be at least 1".into()));
    }
    if !(sec.rel_step > 0.0) || !(sec.abs_floor > 0.0) {
        return Err(CliError::Config("gradcheck: rel_step and abs_floor must be positive".into()));
    }
    let truth = sec.truth.resolve("gradcheck.truth")?;
    let draws: Vec<MaterialParams> = if sec.gammas.is_empty() {
        gradcheck_draws(cfg.seed, sec.draws, truth.rho)
    } else {
        sec.gammas.iter().map(|&g| MaterialParams::from_gamma(g, truth.rho)).collect()
    };
    for (d, m) in draws.iter().enumerate() {
        m.validate().map_err(|e| CliError::Config(format!("gradcheck.gammas[{d}]: {e}")))?;
    }
    run.echo_config()?;
    let bundles = generate_bundles(cfg, &truth)?;
    let targets = bundles
        .iter()
        .map(|b| {
            Ok(ScenarioTarget::from_bundle(b, sec.descriptor)?.with_settings(SolverSettings {
                max_steps: sec.residual_steps,
                pos_tol: 0.0,
                ..b.settings.clone()
            }))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let base = EstimationProblem::new(targets, truth.rho);

    let mut rows = Vec::new();
    for (d, gamma) in draws.iter().enumerate() {
        let mut problem = base.clone();
        problem.balance_force_weights(gamma)?;
        let g = gamma.gamma();
        for (k, c) in gradcheck(&problem, gamma, sec.rel_step, sec.abs_floor)?.into_iter().enumerate() {
            rows.push(GradRow {
                draw: d,
                parameter: c.parameter,
                gamma: g[k],
                analytic_norm: c.analytic_norm,
                fd_norm: c.fd_norm,
                rel_error: c.rel_error,
                pass: c.rel_error <= sec.tolerance,
            });
        }
    }
    run.out.csv("gradcheck.csv", &rows)?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    run.out.note(format!(
        "worst column error {worst:.2e} over {} draws (tolerance {:.1e})",
        draws.len(),
        sec.tolerance
    ));
    if rows.iter().any(|r| !r.pass) {
        return Err(CliError::Failed(format!("gradient check failed: worst error {worst:.2e}")));
    }
    Ok(())
}
