//! Convergence checks, rollout metrics and experiment sweeps.

mod sweep;

pub use sweep::{
    new_goal_direction, run_rollout, run_sweep, time_to_convince, Condition, Models, SweepConfig, SweepKind,
    SweepResults, TraceRow, TrialRow,
};

use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::control::{assistance_raw, RolloutLog};
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{forward_kinematics, ArmSpec, JointState, RobotAction};
use crate::world::Goal;

/// Lyapunov quantities for `V = |g* - s|^2 / 2` at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    pub v: f64,
    /// `-(1/2) e^T [a_h + sum_g b(g) (g - s)]`.
    pub vdot: f64,
    pub sigma_h: f64,
    pub sigma_r: f64,
    pub delta: f64,
    pub b_star: f64,
    pub error_norm: f64,
    /// `b(g*) |e| > delta`: the sufficient condition for `vdot < 0`.
    pub t4_holds: bool,
    /// Discrete change of `V` over the executed step; zero until filled in.
    pub dv: f64,
}

pub fn lyapunov_check(
    s: &JointState,
    b: &Belief,
    a_h: &RobotAction,
    goals: &[Goal],
    g_star: usize,
    a_max: f64,
) -> Result<LyapunovRecord> {
    check_dim(goals.len(), b.len())?;
    check_dim(s.len(), a_h.len())?;
    let target =
        goals.get(g_star).ok_or_else(|| Error::InvalidInput(format!("true goal {g_star} out of {}", goals.len())))?;
    let e = &target.q_ref.q - &s.q;
    let error_norm = e.norm();
    let drift = &a_h.dq + assistance_raw(s, b, goals)?;
    let vdot = -0.5 * e.dot(&drift);
    let sigma_h = a_max;
    let sigma_r = goals
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != g_star)
        .map(|(_, g)| (&g.q_ref.q - &s.q).norm())
        .fold(0.0, f64::max);
    let b_star = b.get(g_star);
    let delta = sigma_h + (1.0 - b_star) * sigma_r;
    Ok(LyapunovRecord {
        v: 0.5 * error_norm * error_norm,
        vdot,
        sigma_h,
        sigma_r,
        delta,
        b_star,
        error_norm,
        t4_holds: b_star * error_norm > delta,
        dv: 0.0,
    })
}

/// Outcome measures of one rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `|s* - s_T|` over the inter-goal distance.
    pub final_state_error: f64,
    /// First step count at which the normalized error is within `tol`,
    /// else the rollout length.
    pub completion_time: usize,
    /// Mean cosine between actual and desired end-effector motion over
    /// steps where `b(g*)` is at least the manipulation threshold.
    pub preference_alignment: Option<f64>,
    pub success: bool,
    /// Sum of normalized errors after every step.
    pub cumulative_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub tol: f64,
    pub manipulation_threshold: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { tol: 0.05, manipulation_threshold: 0.85 }
    }
}

/// Metrics of `log` against the target pose `s_star`; `g_star` is the
/// belief slot of the operator's goal.
pub fn compute_metrics(
    log: &RolloutLog,
    arm: &ArmSpec,
    s_star: &JointState,
    g_star: usize,
    inter_goal_distance: f64,
    params: &MetricParams,
) -> Result<MetricReport> {
    let first = log.records.first().ok_or_else(|| Error::InvalidInput("metrics of an empty log".into()))?;
    check_dim(s_star.len(), first.s.len())?;
    if g_star >= first.b.len() {
        return Err(Error::InvalidInput(format!("true goal {g_star} out of {}", first.b.len())));
    }
    let err = |s: &JointState| (&s_star.q - &s.q).norm() / inter_goal_distance;
    let mut completion = None;
    if err(&first.s) <= params.tol {
        completion = Some(0);
    }
    let mut cumulative = 0.0;
    let target = forward_kinematics(arm, s_star)?;
    let (mut align_sum, mut align_n) = (0.0, 0usize);
    for r in &log.records {
        let e = err(&r.s_next);
        cumulative += e;
        if completion.is_none() && e <= params.tol {
            completion = Some(r.t + 1);
        }
        if r.b.get(g_star) >= params.manipulation_threshold {
            let p0 = forward_kinematics(arm, &r.s)?;
            let p1 = forward_kinematics(arm, &r.s_next)?;
            let actual = [p1.x - p0.x, p1.y - p0.y, p1.phi - p0.phi];
            let desired = [target.x - p0.x, target.y - p0.y, target.phi - p0.phi];
            let na = actual.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nd = desired.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na > 1e-12 && nd > 1e-12 {
                let dot: f64 = actual.iter().zip(&desired).map(|(a, d)| a * d).sum();
                align_sum += (dot / (na * nd)).clamp(-1.0, 1.0);
                align_n += 1;
            }
        }
    }
    let last = log.records.last().expect("non-empty");
    let final_state_error = err(&last.s_next);
    Ok(MetricReport {
        final_state_error,
        completion_time: completion.unwrap_or(log.len()),
        preference_alignment: (align_n > 0).then(|| align_sum / align_n as f64),
        success: final_state_error <= params.tol,
        cumulative_error: cumulative,
    })
}

/// Steps where the sufficient condition holds but `vdot >= 0`.
pub fn lyapunov_violations(log: &RolloutLog) -> usize {
    log.records.iter().filter(|r| r.lyapunov.t4_holds && r.lyapunov.vdot >= 0.0).count()
}

/// Violations of ultimate boundedness after the belief settles on `g*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    /// Step at which `b(g*)` first reached the threshold.
    pub settled_at: Option<usize>,
    /// Steps outside the ball where the normalized error increased.
    pub increases_outside: usize,
    /// Steps after entering the ball that ended outside it (plus slack).
    pub exits: usize,
}

/// Once `b(g*) >= threshold`, the normalized error `|g* - s| / D` should not
/// increase while outside the ball of radius `delta / (b(g*) D)`, and after
/// first entering that ball should stay within it plus `slack`.
pub fn check_boundedness(
    log: &RolloutLog,
    goals: &[Goal],
    g_star: usize,
    inter_goal_distance: f64,
    threshold: f64,
    slack: f64,
) -> BoundednessReport {
    let mut report = BoundednessReport::default();
    let mut inside = false;
    let d = inter_goal_distance;
    let goal = &goals[g_star].q_ref.q;
    for r in &log.records {
        let b_star = r.b.get(g_star);
        if report.settled_at.is_none() {
            if b_star < threshold {
                continue;
            }
            report.settled_at = Some(r.t);
        }
        let l = &r.lyapunov;
        let radius = l.delta / (b_star * d);
        let before = l.error_norm / d;
        let after = (goal - &r.s_next.q).norm() / d;
        if !inside && before <= radius {
            inside = true;
        }
        if inside {
            // The ball moves with the belief, so compare against the radius
            // in effect after the step.
            let b_next = r.b_next.get(g_star);
            let delta_next = l.sigma_h + (1.0 - b_next) * l.sigma_r;
            let radius_next = delta_next / (b_next * d);
            if after > radius.max(radius_next) + slack {
                report.exits += 1;
            }
        } else if after > before {
            report.increases_outside += 1;
        }
    }
    report
}
