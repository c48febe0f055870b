//! Boltzmann-rational simulated operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{HumanView, Session, UserInput};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, ArmSpec, JointState, RobotAction};
use crate::latent::z_grid;
use crate::world::{target_state, Goal, Preference, Scene};

/// How rationality evolves over an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HumanKind {
    Fixed {
        beta: f64,
    },
    /// `beta(t) = slope * t`.
    Learner {
        slope: f64,
    },
    /// Heads for `wrong_goal` while `t <= change_step`, then for the true
    /// goal with a high beta.
    ChangeOfMind {
        beta: f64,
        change_step: usize,
        wrong_goal: usize,
    },
}

impl HumanKind {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            HumanKind::Fixed { beta } | HumanKind::ChangeOfMind { beta, .. } => *beta,
            HumanKind::Learner { slope } => *slope,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("human rationality must be finite and non-negative, got {v}")));
        }
        Ok(())
    }
}

/// Where the post-action distance to the target is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    #[default]
    Joint,
    /// End-effector `(x, y, phi)`.
    Workspace,
}

#[derive(Clone, Debug)]
pub struct HumanModel {
    pub kind: HumanKind,
    pub g_star: usize,
    pub theta_star: Preference,
    pub s_star: JointState,
    /// Target while misleading, for change-of-mind humans.
    pub s_wrong: Option<JointState>,
    pub high_beta: f64,
    pub space: DistanceSpace,
    pub view: HumanView,
    rng: ChaCha8Rng,
}

/// `softmax(-beta * d)` over candidates.
pub fn boltzmann(beta: f64, sq_dists: &[f64]) -> Vec<f64> {
    let min = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = sq_dists.iter().map(|d| (-beta * (d - min)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `p`.
pub fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total just below one.
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Latent candidates: `points` per axis, uniform in `[-1, 1]^d`.
pub fn latent_candidates(latent_dim: usize, points: usize) -> Vec<UserInput> {
    z_grid(latent_dim, points).into_iter().map(UserInput::Latent).collect()
}

/// Retargeting candidates: a `points × points` grid over `[-1, 1]^2`, row-major in y.
pub fn retarget_candidates(points: usize) -> Vec<UserInput> {
    z_grid(2, points).into_iter().map(|v| UserInput::Raw2d([v[1], v[0]])).collect()
}

impl HumanModel {
    pub fn new(scene: &Scene, kind: HumanKind, g_star: usize, theta_star: Preference, seed: u64) -> Result<Self> {
        HumanModel::toward(scene, &scene.goals, kind, g_star, theta_star, seed)
    }

    /// Operator whose goals are `goals` rather than the scene's own.
    pub fn toward(
        scene: &Scene,
        goals: &[Goal],
        kind: HumanKind,
        g_star: usize,
        theta_star: Preference,
        seed: u64,
    ) -> Result<Self> {
        kind.validate()?;
        let goal = goals
            .get(g_star)
            .ok_or_else(|| Error::InvalidInput(format!("true goal {g_star} out of {}", goals.len())))?;
        let s_star = target_state(scene, goal, theta_star)?;
        let s_wrong = match &kind {
            HumanKind::ChangeOfMind { wrong_goal, .. } => {
                let wrong = goals
                    .get(*wrong_goal)
                    .ok_or_else(|| Error::InvalidInput(format!("wrong goal {wrong_goal} out of range")))?;
                Some(target_state(scene, wrong, theta_star)?)
            }
            _ => None,
        };
        Ok(HumanModel {
            kind,
            g_star,
            theta_star,
            s_star,
            s_wrong,
            high_beta: 1000.0,
            space: DistanceSpace::Joint,
            view: HumanView::Decoded,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn beta(&self, t: usize) -> f64 {
        match &self.kind {
            HumanKind::Fixed { beta } => *beta,
            HumanKind::Learner { slope } => slope * t as f64,
            HumanKind::ChangeOfMind { beta, change_step, .. } => {
                if t <= *change_step {
                    *beta
                } else {
                    self.high_beta
                }
            }
        }
    }

    /// The pose the operator is steering toward at time `t`.
    pub fn target(&self, t: usize) -> &JointState {
        match (&self.kind, &self.s_wrong) {
            (HumanKind::ChangeOfMind { change_step, .. }, Some(wrong)) if t <= *change_step => wrong,
            _ => &self.s_star,
        }
    }

    /// Squared distances from the active target to `s + effect` per candidate.
    pub fn distances(&self, arm: &ArmSpec, s: &JointState, effects: &[RobotAction], t: usize) -> Result<Vec<f64>> {
        let target = self.target(t);
        match self.space {
            DistanceSpace::Joint => Ok(effects.iter().map(|a| (&target.q - &s.q - &a.dq).norm_squared()).collect()),
            DistanceSpace::Workspace => {
                let goal = forward_kinematics(arm, target)?;
                effects
                    .iter()
                    .map(|a| {
                        let p = forward_kinematics(arm, &JointState::new(&s.q + &a.dq))?;
                        Ok((p.x - goal.x).powi(2) + (p.y - goal.y).powi(2) + (p.phi - goal.phi).powi(2))
                    })
                    .collect()
            }
        }
    }

    /// Probability of each candidate given its effect at `s`.
    pub fn distribution(&self, arm: &ArmSpec, s: &JointState, effects: &[RobotAction], t: usize) -> Result<Vec<f64>> {
        if effects.is_empty() {
            return Err(Error::InvalidInput("no candidate inputs".into()));
        }
        Ok(boltzmann(self.beta(t), &self.distances(arm, s, effects, t)?))
    }

    /// Distribution over `candidates` in the session's current context.
    pub fn input_distribution(&self, session: &Session, candidates: &[UserInput]) -> Result<Vec<f64>> {
        let effects = session.candidate_effects(candidates, self.view)?;
        self.distribution(&session.scene().arm, session.state(), &effects, session.t())
    }

    /// Draws a candidate index using this operator's own generator.
    pub fn sample(&mut self, p: &[f64]) -> usize {
        sample_index(p, &mut self.rng)
    }

    /// Chooses the next input for `session`.
    pub fn act(&mut self, session: &Session, candidates: &[UserInput]) -> Result<UserInput> {
        let p = self.input_distribution(session, candidates)?;
        Ok(candidates[self.sample(&p)].clone())
    }
}
