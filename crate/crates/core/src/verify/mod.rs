//! Independent oracles for tests and the `grad-check` command.
//!
//! Nothing here calls into `numerics` or `scheduler` arithmetic: the
//! finite-difference routine, the KL reference and the scheduler replayer are
//! written out separately so that agreement with the production code means
//! something. The grad-check suite in [`gradcheck`] uses the production code
//! as the system under test only.

pub mod gradcheck;

use crate::error::{invalid, Result};

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    pub step: f64,
    /// Relative tolerance for parameter gradients.
    pub param_tolerance: f64,
    /// Relative tolerance for logit gradients.
    pub logit_tolerance: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            step: 1e-5,
            param_tolerance: 1e-5,
            logit_tolerance: 1e-6,
        }
    }
}

/// A coordinate whose perturbed evaluation was not finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFinite {
    pub coordinate: usize,
    pub plus: f64,
    pub minus: f64,
}

/// Finite-difference gradient, or every coordinate that evaluated non-finite.
pub type FdResult = std::result::Result<Vec<f64>, Vec<NonFinite>>;

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
///
/// On failure, every coordinate with a non-finite evaluation is reported.
pub fn finite_diff<F>(f: F, point: &[f64], step: f64) -> FdResult
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    let mut bad = Vec::new();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let plus = f(&x);
        x[i] = point[i] - step;
        let minus = f(&x);
        x[i] = point[i];
        if plus.is_finite() && minus.is_finite() {
            grad.push((plus - minus) / (2.0 * step));
        } else {
            bad.push(NonFinite {
                coordinate: i,
                plus,
                minus,
            });
            grad.push(f64::NAN);
        }
    }
    if bad.is_empty() {
        Ok(grad)
    } else {
        Err(bad)
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(floor)
}

/// `Σ pᵢ log(pᵢ / qᵢ)` with `0 · log 0 = 0`.
pub fn kl_reference(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("distributions differ in length"));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if (sp - 1.0).abs() > 1e-9 || (sq - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("not normalised: Σp = {sp}, Σq = {sq}")));
    }
    if let Some(bad) = q.iter().find(|&&v| v <= 0.0) {
        return Err(invalid(format!("q must be strictly positive, found {bad}")));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi / qi).ln() })
        .sum())
}

/// Plain softmax of `z / t`, written independently of `numerics`.
pub fn reference_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Scheduler parameters as plain numbers, so the replayer does not depend on
/// the scheduler module's types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayParams {
    pub t_init: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub mu: f64,
    pub beta: f64,
    pub alpha_ceiling: f64,
    /// `false` reproduces the cosine-only ablation.
    pub amplify: bool,
}

impl From<&crate::scheduler::ScheduleParams> for ReplayParams {
    fn from(p: &crate::scheduler::ScheduleParams) -> Self {
        Self {
            t_init: p.t_init,
            t_min: p.t_min,
            t_max: p.t_max,
            mu: p.mu,
            beta: p.beta,
            alpha_ceiling: p.alpha_ceiling,
            amplify: true,
        }
    }
}

/// Re-executes the dynamic temperature update over a trace of
/// `(progress, teacher_ce, student_ce)` triples, starting from `t_init`.
///
/// Straight-line code with its own cosine, clamp and blend; the operation
/// order matches the live scheduler so results are bit-identical.
pub fn replay_scheduler(params: &ReplayParams, trace: &[(f64, f64, f64)]) -> Result<Vec<f64>> {
    let mut current = params.t_init;
    let mut out = Vec::with_capacity(trace.len());
    for (k, &(progress, l_t, l_s)) in trace.iter().enumerate() {
        if !(progress.is_finite() && l_t.is_finite() && l_s.is_finite()) {
            return Err(invalid(format!("non-finite trace entry at step {k}")));
        }
        let p = progress.clamp(0.0, 1.0);
        let s = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        let d = l_t - l_s;
        let alpha = if !params.amplify {
            0.0
        } else if (d + 1.0 + params.beta).abs() < 1e-12 {
            if d < 0.0 {
                -params.alpha_ceiling
            } else {
                params.alpha_ceiling
            }
        } else {
            d / (d + 1.0 + params.beta)
        };
        let mut target = params.t_init * s;
        if alpha > 1.0 {
            target *= alpha;
        }
        let target = target.max(params.t_min).min(params.t_max);
        let blended = params.mu * current + (1.0 - params.mu) * target;
        current = blended.max(params.t_min).min(params.t_max);
        out.push(current);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let g = finite_diff(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
        let g = finite_diff(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_reports_non_finite_coordinates() {
        let err = finite_diff(|x| x[0] * x[0] + x[1].sqrt(), &[1.0, 0.0], 1e-3).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].coordinate, 1);
    }

    #[test]
    fn kl_reference_examples() {
        assert_eq!(kl_reference(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_reference(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(kl_reference(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert!(kl_reference(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn replay_hand_traces() {
        let p = ReplayParams {
            t_init: 8.0,
            t_min: 4.0,
            t_max: 8.0,
            mu: 0.9,
            beta: 1e-8,
            alpha_ceiling: 10.0,
            amplify: true,
        };
        let t = replay_scheduler(&p, &[(0.0, 2.3, 2.3)]).unwrap();
        assert!((t[0] - 8.0).abs() < 1e-12);
        let t = replay_scheduler(&p, &[(1.0, 2.3, 2.3)]).unwrap();
        assert!((t[0] - 7.6).abs() < 1e-12);
        let t = replay_scheduler(&p, &[(0.0, 1.0, 3.5)]).unwrap();
        assert!((t[0] - 8.0).abs() < 1e-12);
        assert!(replay_scheduler(&p, &[(0.0, f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn replay_equal_losses_follow_cosine_recursion() {
        let p = ReplayParams {
            t_init: 6.0,
            t_min: 2.0,
            t_max: 6.0,
            mu: 0.5,
            beta: 1e-8,
            alpha_ceiling: 10.0,
            amplify: true,
        };
        let trace: Vec<_> = (0..20).map(|k| (k as f64 / 19.0, 1.0, 1.0)).collect();
        let temps = replay_scheduler(&p, &trace).unwrap();
        let mut t = 6.0f64;
        for (k, &got) in temps.iter().enumerate() {
            let s = 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / 19.0).cos());
            t = 0.5 * t + 0.5 * (6.0 * s).clamp(2.0, 6.0);
            assert!((got - t).abs() < 1e-12);
        }
    }
}
