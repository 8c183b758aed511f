//! Single-start, multi-start, and alternating estimation drivers.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, StopReason};
use super::{Bounds, EstimationProblem};
use crate::error::{Error, Result};
use crate::material::{engineering_from_compliance, EngineeringParams, MaterialParams, PARAM_COUNT as P};

/// Bending-only and membrane-only parameter masks.
const BENDING: [bool; P] = [false, false, false, false, true];
const MEMBRANE: [bool; P] = [true, true, true, true, false];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartHistory {
    pub start: usize,
    pub gamma0: [f64; P],
    /// Objective at the start and after each accepted step.
    pub objectives: Vec<f64>,
    pub gamma: Option<[f64; P]>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub gamma_star: MaterialParams,
    /// `None` when the recovered membrane block is not positive definite.
    pub engineering: Option<EngineeringParams>,
    /// ‖r‖² at `gamma_star`.
    pub objective: f64,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub iterations: usize,
    pub history: Vec<StartHistory>,
    pub force_weights: Vec<f64>,
    pub wall_time_s: f64,
}

/// Internal coordinates: log for the positive parameters, `c01 / s` for the
/// coupling with `s = √(c00·c11)` at the start.
struct Coordinates {
    c01_scale: f64,
}

impl Coordinates {
    fn new(gamma0: &[f64; P]) -> Self {
        Self { c01_scale: (gamma0[0] * gamma0[1]).sqrt().max(1.0) }
    }

    fn to_internal(&self, k: usize, v: f64) -> f64 {
        if k == 2 {
            v / self.c01_scale
        } else {
            v.ln()
        }
    }

    fn to_gamma(&self, k: usize, z: f64) -> f64 {
        if k == 2 {
            z * self.c01_scale
        } else {
            z.exp()
        }
    }

    /// dγ_k/dz_k.
    fn derivative(&self, k: usize, gamma_k: f64) -> f64 {
        if k == 2 {
            self.c01_scale
        } else {
            gamma_k
        }
    }
}

fn validate_start(problem: &EstimationProblem, gamma0: &MaterialParams) -> Result<()> {
    problem.validate()?;
    if !problem.bounds.contains(&gamma0.gamma()) {
        return Err(Error::InvalidArgument(format!("start {:?} lies outside the bounds", gamma0.gamma())));
    }
    Ok(())
}

struct RawSolve {
    gamma: [f64; P],
    objective: f64,
    history: Vec<f64>,
    iterations: usize,
    reason: StopReason,
}

/// LM on the active parameters of an already weight-balanced problem.
fn solve_active(problem: &EstimationProblem, gamma0: &MaterialParams) -> Result<RawSolve> {
    validate_start(problem, gamma0)?;
    let base = gamma0.gamma();
    let coords = Coordinates::new(&base);
    let active: Vec<usize> = (0..P).filter(|&k| problem.active[k]).collect();
    let gamma_of = |z: &[f64]| -> [f64; P] {
        let mut g = base;
        for (i, &k) in active.iter().enumerate() {
            // exp(ln(hi)) can round past the bound
            g[k] = coords.to_gamma(k, z[i]).clamp(problem.bounds.lo[k], problem.bounds.hi[k]);
        }
        g
    };
    let model = |z: &[f64]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let g = gamma_of(z);
        let (r, j) = problem.residual_and_jacobian(&problem.material(g))?;
        let jz = j.iter().map(|row| active.iter().map(|&k| row[k] * coords.derivative(k, g[k])).collect()).collect();
        Ok((r, jz))
    };
    let z0: Vec<f64> = active.iter().map(|&k| coords.to_internal(k, base[k])).collect();
    let lo: Vec<f64> = active.iter().map(|&k| coords.to_internal(k, problem.bounds.lo[k])).collect();
    let hi: Vec<f64> = active.iter().map(|&k| coords.to_internal(k, problem.bounds.hi[k])).collect();
    // round-trip through exp/ln can nudge a start sitting on a bound outside it
    let z0: Vec<f64> = z0.iter().zip(lo.iter().zip(&hi)).map(|(z, (l, h))| z.clamp(*l, *h)).collect();
    let out = levenberg_marquardt(&model, &z0, &lo, &hi, &problem.lm)?;
    let mut gamma = gamma_of(&out.x);
    // keep exactly the start value for parameters the solver never moved
    for (i, &k) in active.iter().enumerate() {
        if out.x[i] == z0[i] {
            gamma[k] = base[k];
        }
    }
    Ok(RawSolve {
        gamma,
        objective: out.objective,
        history: out.history,
        iterations: out.iterations,
        reason: out.reason,
    })
}

fn finish(
    problem: &EstimationProblem,
    gamma: [f64; P],
    objective: f64,
    reason: Option<StopReason>,
    iterations: usize,
    history: Vec<StartHistory>,
    started: Instant,
) -> EstimationResult {
    let gamma_star = problem.material(gamma);
    EstimationResult {
        gamma_star,
        engineering: engineering_from_compliance(&gamma_star).ok(),
        objective,
        converged: reason.is_none_or(|r| r.converged()),
        stop_reason: reason,
        iterations,
        history,
        force_weights: problem.force_weights(),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Box-constrained Levenberg–Marquardt from `gamma0`. Unset force weights are
/// balanced at `gamma0` first.
pub fn lm_solve(problem: &EstimationProblem, gamma0: &MaterialParams) -> Result<EstimationResult> {
    let started = Instant::now();
    validate_start(problem, gamma0)?;
    let mut problem = problem.clone();
    problem.balance_force_weights(gamma0)?;
    let raw = solve_active(&problem, gamma0)?;
    let history = vec![StartHistory {
        start: 0,
        gamma0: gamma0.gamma(),
        objectives: raw.history,
        gamma: Some(raw.gamma),
        converged: raw.reason.converged(),
        error: None,
    }];
    Ok(finish(&problem, raw.gamma, raw.objective, Some(raw.reason), raw.iterations, history, started))
}

/// `k` starts drawn log-uniformly in Γ for the positive parameters; c01 is
/// drawn as `f·√(c00·c11)` with `f` uniform in [0, 0.9], clipped to Γ.
pub fn start_points(bounds: &Bounds, k: usize, seed: u64, rho: f64) -> Vec<MaterialParams> {
    let mut rng = crate::rng::stream(seed, "multi-start");
    (0..k)
        .map(|_| {
            let mut g = [0.0; P];
            for i in [0usize, 1, 3, 4] {
                let (lo, hi) = (bounds.lo[i].ln(), bounds.hi[i].ln());
                g[i] = rng.gen_range(lo..=hi).exp().clamp(bounds.lo[i], bounds.hi[i]);
            }
            let f: f64 = rng.gen_range(0.0..=0.9);
            g[2] = (f * (g[0] * g[1]).sqrt()).clamp(bounds.lo[2], bounds.hi[2]);
            MaterialParams::from_gamma(g, rho)
        })
        .collect()
}

/// Runs `lm_solve` from `k` seeded starts and keeps the lowest objective
/// (lowest start index on ties). Force weights are balanced once, at the
/// first start, so every start minimizes the same objective.
pub fn multi_start(problem: &EstimationProblem, k: usize, seed: u64) -> Result<EstimationResult> {
    let started = Instant::now();
    if k == 0 {
        return Err(Error::InvalidArgument("multi-start needs at least one start".into()));
    }
    problem.validate()?;
    let starts = start_points(&problem.bounds, k, seed, problem.rho);
    let mut problem = problem.clone();
    problem.balance_force_weights(&starts[0])?;

    let runs: Vec<Result<RawSolve>> = starts.par_iter().map(|g0| solve_active(&problem, g0)).collect();
    let mut history = Vec::with_capacity(k);
    let mut best: Option<(usize, &RawSolve)> = None;
    let mut diagnostics = Vec::new();
    for (i, (run, g0)) in runs.iter().zip(&starts).enumerate() {
        match run {
            Ok(raw) => {
                history.push(StartHistory {
                    start: i,
                    gamma0: g0.gamma(),
                    objectives: raw.history.clone(),
                    gamma: Some(raw.gamma),
                    converged: raw.reason.converged(),
                    error: None,
                });
                if best.is_none_or(|(_, b)| raw.objective < b.objective) {
                    best = Some((i, raw));
                }
            }
            Err(e) => {
                diagnostics.push(format!("start {i}: {e}"));
                history.push(StartHistory {
                    start: i,
                    gamma0: g0.gamma(),
                    objectives: Vec::new(),
                    gamma: None,
                    converged: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let (_, raw) = best.ok_or_else(|| Error::AllStartsFailed { starts: k, diagnostics: diagnostics.join("; ") })?;
    Ok(finish(&problem, raw.gamma, raw.objective, Some(raw.reason), raw.iterations, history, started))
}

/// Alternates a bending-only solve on `bending` with a membrane-only solve on
/// `membrane`, `rounds` times. Progress is measured on the merged problem; a
/// round that would raise the merged objective is discarded and iteration
/// stops.
pub fn alternating_passes(
    bending: &EstimationProblem,
    membrane: &EstimationProblem,
    gamma0: &MaterialParams,
    rounds: usize,
) -> Result<EstimationResult> {
    let started = Instant::now();
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    validate_start(bending, gamma0)?;
    validate_start(membrane, gamma0)?;
    let mut bending = bending.clone().with_active(BENDING);
    let mut membrane = membrane.clone().with_active(MEMBRANE);
    bending.balance_force_weights(gamma0)?;
    membrane.balance_force_weights(gamma0)?;
    let joint = bending.merged(&membrane);

    let mut gamma = *gamma0;
    let mut objective = joint.objective(&gamma)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for round in 0..rounds {
        let b = solve_active(&bending, &gamma)?;
        let after_b = bending.material(b.gamma);
        let m = solve_active(&membrane, &after_b)?;
        let candidate = membrane.material(m.gamma);
        iterations += b.iterations + m.iterations;
        let cand_obj = joint.objective(&candidate)?;
        for (pass, raw, g0) in [(0, &b, gamma), (1, &m, after_b)] {
            history.push(StartHistory {
                start: 2 * round + pass,
                gamma0: g0.gamma(),
                objectives: raw.history.clone(),
                gamma: Some(raw.gamma),
                converged: raw.reason.converged(),
                error: None,
            });
        }
        if cand_obj > objective {
            break;
        }
        converged = b.reason.converged() && m.reason.converged();
        let unchanged = candidate.gamma() == gamma.gamma();
        gamma = candidate;
        objective = cand_obj;
        if unchanged {
            break;
        }
    }
    let mut result = finish(&joint, gamma.gamma(), objective, None, iterations, history, started);
    result.converged = converged;
    Ok(result)
}
