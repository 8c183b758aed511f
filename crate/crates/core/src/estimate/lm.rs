//! Box-constrained Levenberg–Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A residual with a dense Jacobian, `jacobian[row][col]`.
pub trait LeastSquaresModel: Sync {
    fn evaluate(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

impl<F> LeastSquaresModel for F
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> + Sync,
{
    fn evaluate(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Stop when every gradient component is this close to orthogonal to the
    /// residual: `max_k |J_kᵀr| / (‖J_k‖‖r‖) ≤ gtol`.
    pub gtol: f64,
    /// Stop when an accepted step decreases ‖r‖² by less than `ftol · ‖r‖²`.
    pub ftol: f64,
    /// Stop when the projected step is below `xtol · (‖x‖ + xtol)`.
    pub xtol: f64,
    /// Initial damping relative to the largest diagonal entry of JᵀJ.
    pub tau: f64,
    /// Consecutive rejected steps before giving up.
    pub max_rejections: usize,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self { max_iterations: 100, gtol: 1e-8, ftol: 1e-10, xtol: 1e-10, tau: 1e-4, max_rejections: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroResidual,
    Gradient,
    SmallDecrease,
    SmallStep,
    MaxIterations,
    Rejections,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, Self::MaxIterations | Self::Rejections)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// ‖r‖² at `x`.
    pub objective: f64,
    /// ‖r‖² after the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
    pub reason: StopReason,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes ‖r(x)‖² over the box `[lo, hi]`.
pub fn levenberg_marquardt(
    model: &dyn LeastSquaresModel,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    settings: &LmSettings,
) -> Result<LmOutcome> {
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(Error::InvalidArgument("bounds do not match the variable count".into()));
    }
    for k in 0..n {
        if !(lo[k] <= x0[k] && x0[k] <= hi[k]) {
            return Err(Error::InvalidArgument(format!(
                "start x[{k}] = {} lies outside [{}, {}]",
                x0[k], lo[k], hi[k]
            )));
        }
    }

    let mut x = x0.to_vec();
    let (mut r, mut jac) = model.evaluate(&x)?;
    let mut f = sq(&r);
    if !f.is_finite() {
        return Err(Error::InvalidArgument("residual is not finite at the start".into()));
    }
    let mut history = vec![f];
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut rejections = 0;
    let mut accepted = 0;
    let mut iterations = 0;

    let reason = loop {
        if f == 0.0 {
            break StopReason::ZeroResidual;
        }
        if iterations >= settings.max_iterations {
            break StopReason::MaxIterations;
        }
        let m = r.len();
        let j = DMatrix::from_fn(m, n, |row, col| jac[row][col]);
        let rv = DVector::from_column_slice(&r);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &rv;

        let rnorm = f.sqrt();
        let cosine = (0..n)
            .map(|k| {
                let cn = jtj[(k, k)].sqrt();
                if cn > 0.0 {
                    g[k].abs() / (cn * rnorm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if cosine <= settings.gtol {
            break StopReason::Gradient;
        }

        let diag: Vec<f64> = (0..n).map(|k| jtj[(k, k)].max(1e-300)).collect();
        if mu < 0.0 {
            mu = settings.tau * diag.iter().cloned().fold(0.0, f64::max);
        }
        iterations += 1;

        let mut a = jtj.clone();
        for k in 0..n {
            a[(k, k)] += mu * diag[k];
        }
        let step = match a.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match a.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    rejections += 1;
                    if rejections >= settings.max_rejections {
                        break StopReason::Rejections;
                    }
                    continue;
                }
            },
        };
        let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        project(&mut trial, lo, hi);
        let dp = DVector::from_iterator(n, trial.iter().zip(&x).map(|(a, b)| a - b));
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dp.norm() <= settings.xtol * (xnorm + settings.xtol) {
            // a vanishing step after rejections means the damping ran away
            break if rejections > 0 { StopReason::Rejections } else { StopReason::SmallStep };
        }
        let predicted = -(2.0 * dp.dot(&g) + (dp.transpose() * &jtj * &dp)[(0, 0)]);

        let candidate = model.evaluate(&trial).ok().filter(|(rt, _)| sq(rt).is_finite());
        let improved = candidate.and_then(|(rt, jt)| {
            let ft = sq(&rt);
            let rho = if predicted > 0.0 { (f - ft) / predicted } else { -1.0 };
            (ft < f && rho > 0.0).then_some((rt, jt, ft, rho))
        });
        match improved {
            Some((rt, jt, ft, rho)) => {
                let decrease = f - ft;
                x = trial;
                r = rt;
                jac = jt;
                let previous = f;
                f = ft;
                history.push(f);
                accepted += 1;
                rejections = 0;
                mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                if decrease <= settings.ftol * previous {
                    break StopReason::SmallDecrease;
                }
            }
            None => {
                mu *= nu;
                nu *= 2.0;
                rejections += 1;
                if rejections >= settings.max_rejections {
                    break StopReason::Rejections;
                }
            }
        }
    };

    Ok(LmOutcome { x, residual: r, objective: f, history, iterations, accepted, reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Eval = Result<(Vec<f64>, Vec<Vec<f64>>)>;

    fn linear(target: Vec<f64>) -> impl Fn(&[f64]) -> Eval + Sync {
        move |x: &[f64]| {
            let n = x.len();
            let r = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            let j = (0..n).map(|i| (0..n).map(|k| if i == k { 1.0 } else { 0.0 }).collect()).collect();
            Ok((r, j))
        }
    }

    #[test]
    fn zero_residual_start_returns_immediately() {
        let model = linear(vec![1.0, 2.0]);
        let out = levenberg_marquardt(&model, &[1.0, 2.0], &[0.0; 2], &[5.0; 2], &LmSettings::default()).unwrap();
        assert_eq!(out.x, vec![1.0, 2.0]);
        assert_eq!(out.accepted, 0);
        assert_eq!(out.reason, StopReason::ZeroResidual);
    }

    #[test]
    fn identity_problem_converges_in_two_iterations() {
        let target = vec![3.0, -1.0, 0.5];
        let model = linear(target.clone());
        let settings = LmSettings { max_iterations: 2, ..Default::default() };
        let out = levenberg_marquardt(&model, &[0.0; 3], &[-10.0; 3], &[10.0; 3], &settings).unwrap();
        assert!(out.iterations <= 2);
        for (a, b) in out.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let model = |x: &[f64]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            Ok((vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]], vec![vec![-20.0 * x[0], 10.0], vec![-1.0, 0.0]]))
        };
        let out = levenberg_marquardt(&model, &[-1.2, 1.0], &[-5.0; 2], &[5.0; 2], &LmSettings::default()).unwrap();
        assert!(out.reason.converged());
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bounds_are_respected() {
        let model = linear(vec![3.0, 3.0]);
        let out = levenberg_marquardt(&model, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 2.0], &LmSettings::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-9 && (out.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn start_outside_box_is_rejected() {
        let model = linear(vec![0.0]);
        let e = levenberg_marquardt(&model, &[2.0], &[0.0], &[1.0], &LmSettings::default());
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn failing_model_leads_to_rejection() {
        let model = |x: &[f64]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            if x[0] != 0.5 {
                return Err(Error::Divergence { step: 1, reason: "test".into() });
            }
            Ok((vec![1.0], vec![vec![1.0]]))
        };
        let out = levenberg_marquardt(&model, &[0.5], &[0.0], &[1.0], &LmSettings::default()).unwrap();
        assert_eq!(out.reason, StopReason::Rejections);
        assert_eq!(out.x, vec![0.5]);
        assert!(!out.reason.converged());
    }
}
