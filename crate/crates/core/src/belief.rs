//! Bayesian inference over the discrete goal set.
//!
//! The observation model is Boltzmann in per-step progress: an action that
//! shrinks the joint-space distance to a goal is evidence for that goal.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{ArmSpec, JointState, RobotAction};
use crate::world::Goal;

/// Probability vector over goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    p: Vec<f64>,
}

/// Sharpness and floor of the goal filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeliefParams {
    pub kappa: f64,
    pub floor: f64,
}

impl Default for BeliefParams {
    fn default() -> Self {
        BeliefParams { kappa: 5.0, floor: 1e-6 }
    }
}

impl BeliefParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::Config(format!("belief kappa must be positive, got {}", self.kappa)));
        }
        if !(self.floor.is_finite() && self.floor > 0.0 && self.floor < 0.5) {
            return Err(Error::Config(format!("belief floor must be in (0, 0.5), got {}", self.floor)));
        }
        Ok(())
    }
}

impl Belief {
    pub fn uniform(num_goals: usize) -> Result<Self> {
        if num_goals == 0 {
            return Err(Error::InvalidInput("belief over zero goals".into()));
        }
        Ok(Belief { p: vec![1.0 / num_goals as f64; num_goals] })
    }

    /// All mass on `index`.
    pub fn one_hot(num_goals: usize, index: usize) -> Result<Self> {
        if index >= num_goals {
            return Err(Error::InvalidInput(format!("goal index {index} out of {num_goals}")));
        }
        let mut p = vec![0.0; num_goals];
        p[index] = 1.0;
        Ok(Belief { p })
    }

    /// Validates a raw probability vector (non-negative, sums to one within 1e-9).
    pub fn from_probs(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidInput("belief over zero goals".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("belief entries must be finite and non-negative".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("belief sums to {sum}, not 1")));
        }
        Ok(Belief { p })
    }

    /// Normalizes any non-negative vector with positive mass.
    pub fn normalized(mut p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || p.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("cannot normalize belief without positive mass".into()));
        }
        p.iter_mut().for_each(|v| *v /= sum);
        Ok(Belief { p })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn get(&self, goal: usize) -> f64 {
        self.p[goal]
    }

    /// Index of the most likely goal (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.p.iter().enumerate() {
            if *v > self.p[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self.p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    }
}

/// Reduction in joint-space distance to `goal` achieved by one step of `a`.
pub fn progress(arm: &ArmSpec, s: &JointState, a: &RobotAction, goal: &Goal) -> f64 {
    let next = &s.q + &a.dq * arm.dt();
    (&goal.q_ref.q - &s.q).norm() - (&goal.q_ref.q - next).norm()
}

/// Unnormalized `P(a_h | s, g) = exp(kappa * progress)`.
pub fn likelihood(arm: &ArmSpec, s: &JointState, a_h: &RobotAction, goal: &Goal, kappa: f64) -> f64 {
    (kappa * progress(arm, s, a_h, goal)).exp()
}

/// Posterior over goals after observing `a_h` at `s`.
///
/// Entries are floored at `params.floor` and renormalized so no goal is ever
/// ruled out for good.
pub fn update(
    b: &Belief,
    arm: &ArmSpec,
    s: &JointState,
    a_h: &RobotAction,
    goals: &[Goal],
    params: &BeliefParams,
) -> Result<Belief> {
    check_dim(b.len(), goals.len())?;
    check_dim(arm.dof(), s.len())?;
    check_dim(arm.dof(), a_h.len())?;
    // Work in log space; only differences between goals matter.
    let logs: Vec<f64> = goals.iter().map(|g| params.kappa * progress(arm, s, a_h, g)).collect();
    if logs.iter().all(|l| *l == logs[0]) {
        // Uninformative observation: the posterior is the prior.
        return Ok(b.clone());
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = b.p.iter().zip(&logs).map(|(p, l)| p * (l - max).exp()).collect();
    let sum: f64 = post.iter().sum();
    post.iter_mut().for_each(|v| *v = (*v / sum).max(params.floor));
    let sum: f64 = post.iter().sum();
    post.iter_mut().for_each(|v| *v /= sum);
    Ok(Belief { p: post })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Goal;

    fn arm2() -> ArmSpec {
        ArmSpec::uniform(2, 0.1).unwrap()
    }

    fn goal(id: usize, q: &[f64]) -> Goal {
        Goal::new(id, &arm2(), JointState::from_slice(q)).unwrap()
    }

    #[test]
    fn uniform_beliefs() {
        assert_eq!(Belief::uniform(2).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(Belief::uniform(1).unwrap().probs(), &[1.0]);
        assert_eq!(Belief::uniform(4).unwrap().probs(), &[0.25; 4]);
        assert!(matches!(Belief::uniform(0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_action_carries_no_evidence() {
        let g = goal(0, &[1.0, 0.0]);
        let s = JointState::zeros(2);
        assert_eq!(likelihood(&arm2(), &s, &RobotAction::zeros(2), &g, 5.0), 1.0);
    }

    #[test]
    fn action_toward_goal_beats_equidistant_goal() {
        let g1 = goal(0, &[1.0, 0.0]);
        let g2 = goal(1, &[0.0, 1.0]);
        let s = JointState::zeros(2);
        let a = RobotAction::from_slice(&[1.0, 0.0]);
        // progress toward g1 is exactly dt, toward g2 it is 1 - sqrt(1 + dt^2).
        let l1 = likelihood(&arm2(), &s, &a, &g1, 5.0);
        let l2 = likelihood(&arm2(), &s, &a, &g2, 5.0);
        assert!((l1 - (5.0f64 * 0.1).exp()).abs() < 1e-12);
        assert!((l2 - (5.0 * (1.0 - 1.01f64.sqrt())).exp()).abs() < 1e-12);
        assert!(l1 > l2);
    }

    #[test]
    fn doubling_kappa_squares_ratio() {
        let g1 = goal(0, &[1.0, 0.3]);
        let g2 = goal(1, &[-0.4, 1.0]);
        let s = JointState::from_slice(&[0.1, 0.2]);
        let a = RobotAction::from_slice(&[0.7, -0.2]);
        let r1 = likelihood(&arm2(), &s, &a, &g1, 5.0) / likelihood(&arm2(), &s, &a, &g2, 5.0);
        let r2 = likelihood(&arm2(), &s, &a, &g1, 10.0) / likelihood(&arm2(), &s, &a, &g2, 10.0);
        assert!((r2 - r1 * r1).abs() < 1e-12 * r2);
    }

    #[test]
    fn bayes_arithmetic() {
        // Likelihood ratio 2:1 between the goals: pick kappa so exp(kappa*dp) = 2.
        let g1 = goal(0, &[1.0, 0.0]);
        let g2 = goal(1, &[-1.0, 0.0]);
        let s = JointState::zeros(2);
        let a = RobotAction::from_slice(&[1.0, 0.0]);
        // progress: +0.1 for g1, -0.1 for g2.
        let kappa = 2f64.ln() / 0.2;
        let params = BeliefParams { kappa, floor: 1e-6 };
        let b = update(&Belief::uniform(2).unwrap(), &arm2(), &s, &a, &[g1, g2], &params).unwrap();
        assert!((b.get(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.get(1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equal_likelihoods_leave_belief_unchanged() {
        let g1 = goal(0, &[1.0, 0.0]);
        let g2 = goal(1, &[-1.0, 0.0]);
        let s = JointState::zeros(2);
        // Orthogonal to both goal directions with equal distances afterwards.
        let a = RobotAction::from_slice(&[0.0, 1.0]);
        let prior = Belief::from_probs(vec![0.3, 0.7]).unwrap();
        let b = update(&prior, &arm2(), &s, &a, &[g1, g2], &BeliefParams::default()).unwrap();
        assert_eq!(b, prior);
    }

    #[test]
    fn repeated_evidence_converges_monotonically() {
        let g1 = goal(0, &[1.0, 0.0]);
        let g2 = goal(1, &[-1.0, 0.0]);
        let goals = [g1, g2];
        let params = BeliefParams::default();
        let s = JointState::zeros(2);
        let a = RobotAction::from_slice(&[0.5, 0.0]);
        let mut b = Belief::uniform(2).unwrap();
        let mut prev = b.get(0);
        for _ in 0..50 {
            b = update(&b, &arm2(), &s, &a, &goals, &params).unwrap();
            // Flooring renormalizes by at most floor^2 relative.
            assert!(b.get(0) >= prev - 1e-11);
            prev = b.get(0);
        }
        assert!(b.get(0) > 1.0 - 2.0 * params.floor);
        assert!(b.get(1) >= params.floor / (1.0 + 2.0 * params.floor));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(Belief::uniform(3).unwrap().argmax(), 0);
        assert_eq!(Belief::from_probs(vec![0.2, 0.4, 0.4]).unwrap().argmax(), 1);
    }
}
