//! Goals, preferences and the two-cup scene.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{damped_pinv_apply, forward_kinematics, pose_jacobian, ArmSpec, EePose, JointState};

/// A discrete goal, represented by a reference joint configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: usize,
    pub q_ref: JointState,
    pub workspace_pos: (f64, f64),
}

impl Goal {
    pub fn new(id: usize, arm: &ArmSpec, q_ref: JointState) -> Result<Self> {
        let pose = forward_kinematics(arm, &q_ref)?;
        Ok(Goal { id, q_ref, workspace_pos: (pose.x, pose.y) })
    }
}

/// Grasp preference in `[0, 1]`, from top (0) to side (1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Preference(f64);

impl Preference {
    pub fn new(theta: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&theta) {
            Ok(Preference(theta))
        } else {
            Err(Error::InvalidInput(format!("preference {theta} outside [0, 1]")))
        }
    }

    pub fn theta(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Preference {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Preference::new(v)
    }
}

impl From<Preference> for f64 {
    fn from(p: Preference) -> f64 {
        p.0
    }
}

/// Affine map from preference to end-effector orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMap {
    pub o_top: f64,
    pub o_side: f64,
}

impl PreferenceMap {
    pub fn orientation(&self, theta: Preference) -> f64 {
        self.o_top + theta.0 * (self.o_side - self.o_top)
    }
}

/// Damped least-squares IK settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkParams {
    pub damping: f64,
    pub max_iters: usize,
    pub step_scale: f64,
    /// Residual below which iteration stops early.
    pub converge_tol: f64,
    /// Largest residual accepted after `max_iters`.
    pub accept_tol: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams { damping: 1e-2, max_iters: 500, step_scale: 0.5, converge_tol: 1e-10, accept_tol: 1e-4 }
    }
}

/// Solves for a configuration reaching `target`, starting at `seed`.
pub fn solve_ik(arm: &ArmSpec, seed: &JointState, target: EePose, params: &IkParams) -> Result<JointState> {
    check_dim(arm.dof(), seed.len())?;
    let mut q = seed.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=params.max_iters {
        let pose = forward_kinematics(arm, &q)?;
        let err = DVector::from_column_slice(&[target.x - pose.x, target.y - pose.y, target.phi - pose.phi]);
        residual = err.amax();
        if residual <= params.converge_tol {
            return Ok(q);
        }
        let j = pose_jacobian(arm, &q)?;
        let dq = damped_pinv_apply(&j, &err, params.damping);
        q.q += dq * params.step_scale;
    }
    if residual <= params.accept_tol {
        Ok(q)
    } else {
        Err(Error::UnreachableTarget(format!(
            "IK residual {residual:.3e} after {} iterations for target ({:.4}, {:.4}, {:.4})",
            params.max_iters, target.x, target.y, target.phi
        )))
    }
}

/// A task scene: arm, goals, start and preference parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub arm: ArmSpec,
    pub goals: Vec<Goal>,
    pub start: JointState,
    pub preference: PreferenceMap,
    pub ik: IkParams,
    /// Joint-space distance between the first two goals; the unit of
    /// normalized error.
    pub inter_goal_distance: f64,
}

impl Scene {
    pub fn num_goals(&self) -> usize {
        self.goals.len()
    }

    pub fn dof(&self) -> usize {
        self.arm.dof()
    }

    /// Content hash identifying this scene across pipeline stages.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn goal_index(&self, id: usize) -> Option<usize> {
        self.goals.iter().position(|g| g.id == id)
    }
}

/// The pose `s*` a human with goal `goal` and preference `theta` wants:
/// end effector at the goal with the preferred grasp orientation.
pub fn target_state(scene: &Scene, goal: &Goal, theta: Preference) -> Result<JointState> {
    let target = EePose { x: goal.workspace_pos.0, y: goal.workspace_pos.1, phi: scene.preference.orientation(theta) };
    solve_ik(&scene.arm, &goal.q_ref, target, &scene.ik)
}

/// Parameters of the two-cup scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub link_lengths: Vec<f64>,
    pub dt: f64,
    pub start: Vec<f64>,
    /// Workspace positions of the cups.
    pub cups: Vec<(f64, f64)>,
    pub o_top: f64,
    pub o_side: f64,
    /// Preference whose orientation the goal reference poses adopt.
    pub reference_theta: f64,
    pub min_goal_separation: f64,
    pub ik: IkParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            link_lengths: vec![1.0; 5],
            dt: 0.1,
            start: vec![1.0, 0.4, 0.3, 0.2, -0.3],
            cups: vec![(-2.2, 2.8), (2.4, 2.6)],
            o_top: 1.5,
            o_side: 1.6,
            reference_theta: 0.5,
            min_goal_separation: 0.5,
            ik: IkParams::default(),
        }
    }
}

/// Builds the two-cup scene: cups on either side of the arm, start between them.
pub fn make_two_cup_scene(config: &SceneConfig) -> Result<Scene> {
    let arm = ArmSpec::new(config.link_lengths.clone(), config.dt)?;
    let start = JointState::from_slice(&config.start);
    check_dim(arm.dof(), start.len())?;
    if config.cups.len() < 2 {
        return Err(Error::Config(format!("two-cup scene needs at least 2 cups, got {}", config.cups.len())));
    }
    if !(config.o_top.is_finite() && config.o_side.is_finite()) {
        return Err(Error::Config("preference orientations must be finite".into()));
    }
    let preference = PreferenceMap { o_top: config.o_top, o_side: config.o_side };
    let reference = preference.orientation(Preference::new(config.reference_theta)?);
    let mut goals = Vec::with_capacity(config.cups.len());
    for (id, &(x, y)) in config.cups.iter().enumerate() {
        let dist = x.hypot(y);
        if dist.is_nan() || dist > arm.reach() {
            return Err(Error::UnreachableTarget(format!(
                "cup {id} at ({x}, {y}) is {dist:.3} from the base; reach is {:.3}",
                arm.reach()
            )));
        }
        let q_ref = solve_ik(&arm, &start, EePose { x, y, phi: reference }, &config.ik)?;
        goals.push(Goal::new(id, &arm, q_ref)?);
    }
    for i in 0..goals.len() {
        for j in i + 1..goals.len() {
            let sep = (&goals[i].q_ref.q - &goals[j].q_ref.q).norm();
            if sep < config.min_goal_separation {
                return Err(Error::Config(format!(
                    "goals {i} and {j} are {sep:.3} rad apart; need at least {}",
                    config.min_goal_separation
                )));
            }
        }
    }
    let inter_goal_distance = (&goals[0].q_ref.q - &goals[1].q_ref.q).norm();
    Ok(Scene { arm, goals, start, preference, ik: config.ik, inter_goal_distance })
}
