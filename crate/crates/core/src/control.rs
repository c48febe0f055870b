//! The shared-autonomy loop: assistance, blending, retargeting, new-goal
//! transfer and the per-session state machine.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::belief::{self, Belief, BeliefParams};
use crate::error::{check_dim, Error, Result};
use crate::experiments::{lyapunov_check, LyapunovRecord};
use crate::kinematics::{damped_pinv_apply, jacobian, step, ArmSpec, JointState, RobotAction};
use crate::latent::LatentModel;
use crate::world::{Goal, Scene};

/// Input source and whether assistance is blended in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Retargeted 2-DoF input, no assistance.
    #[serde(rename = "R")]
    Retarget,
    #[serde(rename = "R+SA")]
    RetargetShared,
    /// Decoded latent input, no assistance.
    #[serde(rename = "LA")]
    Latent,
    #[serde(rename = "LA+SA")]
    LatentShared,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Retarget, Mode::RetargetShared, Mode::Latent, Mode::LatentShared];

    pub fn uses_latent(self) -> bool {
        matches!(self, Mode::Latent | Mode::LatentShared)
    }

    pub fn assisted(self) -> bool {
        matches!(self, Mode::RetargetShared | Mode::LatentShared)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Retarget => "R",
            Mode::RetargetShared => "R+SA",
            Mode::Latent => "LA",
            Mode::LatentShared => "LA+SA",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub alpha: f64,
    pub a_max: f64,
    pub mode: Mode,
    /// Use the model trained with the entropy term.
    pub entropy_model: bool,
    /// End-effector speed for a unit retargeting input.
    pub v_max: f64,
    pub retarget_damping: f64,
    /// Scale `alpha` by the largest belief entry.
    pub confidence_alpha: bool,
    pub belief: BeliefParams,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            alpha: 0.5,
            a_max: 1.0,
            mode: Mode::LatentShared,
            entropy_model: true,
            v_max: 1.0,
            retarget_damping: 0.05,
            confidence_alpha: false,
            belief: BeliefParams::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        for (name, v) in [("a_max", self.a_max), ("v_max", self.v_max), ("retarget_damping", self.retarget_damping)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("controller.{name} must be positive, got {v}")));
            }
        }
        self.belief.validate()
    }
}

/// Unclamped `sum_g b(g) (g - s)`.
pub fn assistance_raw(s: &JointState, b: &Belief, goals: &[Goal]) -> Result<DVector<f64>> {
    check_dim(goals.len(), b.len())?;
    let mut a = DVector::zeros(s.len());
    for (g, p) in goals.iter().zip(b.probs()) {
        check_dim(s.len(), g.q_ref.len())?;
        a += (&g.q_ref.q - &s.q) * *p;
    }
    Ok(a)
}

/// Confidence-weighted pull toward the goals, clamped to `a_max`.
pub fn assistance(s: &JointState, b: &Belief, goals: &[Goal], a_max: f64) -> Result<RobotAction> {
    Ok(RobotAction::new(assistance_raw(s, b, goals)?).clamped(a_max))
}

/// `(1 - alpha) a_h + alpha a_r`, clamped to `a_max`.
pub fn blend(a_h: &RobotAction, a_r: &RobotAction, alpha: f64, a_max: f64) -> Result<RobotAction> {
    check_dim(a_h.len(), a_r.len())?;
    Ok(RobotAction::new(&a_h.dq * (1.0 - alpha) + &a_r.dq * alpha).clamped(a_max))
}

/// Joint velocities realizing the end-effector velocity `v_max * input`.
pub fn retarget(
    input: [f64; 2],
    s: &JointState,
    arm: &ArmSpec,
    v_max: f64,
    damping: f64,
    a_max: f64,
) -> Result<RobotAction> {
    if input.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!("retarget input {input:?} outside [-1, 1]")));
    }
    let j = jacobian(arm, s)?;
    let v = DVector::from_column_slice(&[input[0] * v_max, input[1] * v_max]);
    Ok(RobotAction::new(damped_pinv_apply(&j, &v, damping)).clamped(a_max))
}

/// A goal unseen in training, steered through the context of a trained one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewGoalMap {
    pub g_new: Goal,
    pub g_trained: Goal,
}

impl NewGoalMap {
    /// Shift taking states near `g_new` to equivalent states near `g_trained`.
    pub fn offset(&self) -> DVector<f64> {
        &self.g_trained.q_ref.q - &self.g_new.q_ref.q
    }
}

/// Decodes `z` in the trained context equivalent to `(s, b)`.
///
/// `b` is indexed by trained goal slot, with the new goal occupying the
/// slot of `map.g_trained`. A translation leaves velocities unchanged, so
/// the decoded action is returned as is.
pub fn transfer_decode(
    model: &LatentModel,
    map: &NewGoalMap,
    z: &[f64],
    s: &JointState,
    b: &Belief,
) -> Result<RobotAction> {
    let shifted = JointState::new(&s.q + map.offset());
    model.decode(z, &shifted, b)
}

/// Operator command for one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserInput {
    Latent(Vec<f64>),
    Raw2d([f64; 2]),
}

impl UserInput {
    pub fn values(&self) -> &[f64] {
        match self {
            UserInput::Latent(z) => z,
            UserInput::Raw2d(v) => v,
        }
    }
}

/// One executed step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// State before the step.
    pub s: JointState,
    pub input: UserInput,
    pub a_h: RobotAction,
    pub a_r: RobotAction,
    pub a: RobotAction,
    /// Belief used for assistance, before observing `a_h`.
    pub b: Belief,
    pub lyapunov: LyapunovRecord,
    pub s_next: JointState,
    pub b_next: Belief,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutLog {
    pub records: Vec<StepRecord>,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `t, q…, z…, a_h…, a_r…, a…, b…, V, Vdot, t4_holds, delta, dV`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else {
            return out;
        };
        let mut header = vec!["t".to_string()];
        let mut names = |prefix: &str, n: usize| {
            for i in 0..n {
                header.push(format!("{prefix}{i}"));
            }
        };
        names("q", first.s.len());
        names("z", first.input.values().len());
        names("a_h", first.a_h.len());
        names("a_r", first.a_r.len());
        names("a", first.a.len());
        names("b", first.b.len());
        header.extend(["V", "Vdot", "t4_holds", "delta", "dV"].map(String::from));
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            let nums =
                r.s.as_slice()
                    .iter()
                    .chain(r.input.values())
                    .chain(r.a_h.as_slice())
                    .chain(r.a_r.as_slice())
                    .chain(r.a.as_slice())
                    .chain(r.b.probs());
            row.extend(nums.map(|v| v.to_string()));
            let l = &r.lyapunov;
            row.push(l.v.to_string());
            row.push(l.vdot.to_string());
            row.push(l.t4_holds.to_string());
            row.push(l.delta.to_string());
            row.push(l.dv.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Candidate effects a simulated operator weighs when choosing an input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanView {
    /// The decoded (or retargeted) action alone.
    Decoded,
    /// The action that would actually be executed after blending.
    Executed,
}

/// Live state of one teleoperation session.
#[derive(Clone, Debug)]
pub struct Session {
    scene: Arc<Scene>,
    model: Option<Arc<LatentModel>>,
    config: ControllerConfig,
    goals: Vec<Goal>,
    maps: Vec<Option<NewGoalMap>>,
    s: JointState,
    b: Belief,
    t: usize,
    g_star: Option<usize>,
    pub log: RolloutLog,
    keep_log: bool,
}

impl Session {
    /// Starts at the scene's start state with a uniform belief over its goals.
    pub fn new(scene: Arc<Scene>, model: Option<Arc<LatentModel>>, config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        if let Some(m) = &model {
            if m.scene_hash != scene.hash() {
                return Err(Error::SceneMismatch { expected: scene.hash(), found: m.scene_hash.clone() });
            }
        } else if config.mode.uses_latent() {
            return Err(Error::Config(format!("mode {} needs a latent model", config.mode)));
        }
        let goals = scene.goals.clone();
        Ok(Session {
            maps: vec![None; goals.len()],
            b: Belief::uniform(goals.len())?,
            s: scene.start.clone(),
            goals,
            scene,
            model,
            config,
            t: 0,
            g_star: None,
            log: RolloutLog::default(),
            keep_log: true,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &JointState {
        &self.s
    }

    pub fn belief(&self) -> &Belief {
        &self.b
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Goals the robot currently reasons about, by trained slot.
    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn model(&self) -> Option<&LatentModel> {
        self.model.as_deref()
    }

    /// Goal slot used as `g*` for the convergence check; the most likely
    /// goal when unset.
    pub fn set_true_goal(&mut self, slot: Option<usize>) -> Result<()> {
        if let Some(i) = slot {
            if i >= self.goals.len() {
                return Err(Error::InvalidInput(format!("goal slot {i} out of {}", self.goals.len())));
            }
        }
        self.g_star = slot;
        Ok(())
    }

    pub fn set_keep_log(&mut self, keep: bool) {
        self.keep_log = keep;
    }

    pub fn set_state(&mut self, s: JointState) -> Result<()> {
        check_dim(self.scene.dof(), s.len())?;
        self.s = s;
        Ok(())
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        if mode.uses_latent() && self.model.is_none() {
            return Err(Error::Config(format!("mode {mode} needs a latent model")));
        }
        self.config.mode = mode;
        Ok(())
    }

    /// Back to the start state, uniform belief, time zero and trained goals.
    pub fn reset(&mut self) {
        self.s = self.scene.start.clone();
        self.goals = self.scene.goals.clone();
        self.maps = vec![None; self.goals.len()];
        self.b = Belief::uniform(self.goals.len()).expect("scene has goals");
        self.t = 0;
        self.log = RolloutLog::default();
    }

    /// Replaces the trained goal nearest to `g_new` (in joint space) with
    /// `g_new`; decodes are routed through [`transfer_decode`] while it is
    /// the most likely goal. Returns the slot taken over.
    pub fn add_goal(&mut self, g_new: Goal) -> Result<usize> {
        check_dim(self.scene.dof(), g_new.q_ref.len())?;
        let slot = self
            .scene
            .goals
            .iter()
            .enumerate()
            .map(|(i, g)| (i, (&g.q_ref.q - &g_new.q_ref.q).norm()))
            .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
            .0;
        let g_trained = self.scene.goals[slot].clone();
        self.goals[slot] = g_new.clone();
        self.maps[slot] = Some(NewGoalMap { g_new, g_trained });
        Ok(slot)
    }

    fn alpha(&self) -> f64 {
        if !self.config.mode.assisted() {
            0.0
        } else if self.config.confidence_alpha {
            self.config.alpha * self.b.probs().iter().cloned().fold(0.0, f64::max)
        } else {
            self.config.alpha
        }
    }

    fn assist(&self) -> Result<RobotAction> {
        if self.config.mode.assisted() {
            assistance(&self.s, &self.b, &self.goals, self.config.a_max)
        } else {
            Ok(RobotAction::zeros(self.s.len()))
        }
    }

    /// Human actions for each latent input in the current context.
    pub fn decode_candidates<Z: AsRef<[f64]>>(&self, zs: &[Z]) -> Result<Vec<RobotAction>> {
        let model = self.model.as_deref().ok_or_else(|| Error::Config("no latent model loaded".into()))?;
        let s = match &self.maps[self.b.argmax()] {
            Some(map) => JointState::new(&self.s.q + map.offset()),
            None => self.s.clone(),
        };
        Ok(model.decode_many(zs, &s, &self.b)?.into_iter().map(|a| a.clamped(self.config.a_max)).collect())
    }

    fn retarget_input(&self, input: [f64; 2]) -> Result<RobotAction> {
        retarget(input, &self.s, &self.scene.arm, self.config.v_max, self.config.retarget_damping, self.config.a_max)
    }

    /// The effect of each candidate input as seen by an operator with `view`.
    pub fn candidate_effects(&self, inputs: &[UserInput], view: HumanView) -> Result<Vec<RobotAction>> {
        let mut latent = Vec::new();
        for input in inputs {
            if let UserInput::Latent(z) = input {
                latent.push(z.as_slice());
            }
        }
        let mut decoded = if latent.is_empty() { Vec::new() } else { self.decode_candidates(&latent)? }.into_iter();
        let a_r = self.assist()?;
        let alpha = self.alpha();
        inputs
            .iter()
            .map(|input| {
                let a_h = match input {
                    UserInput::Latent(_) => decoded.next().expect("one decode per latent input"),
                    UserInput::Raw2d(v) => self.retarget_input(*v)?,
                };
                match view {
                    HumanView::Decoded => Ok(a_h),
                    HumanView::Executed => blend(&a_h, &a_r, alpha, self.config.a_max),
                }
            })
            .collect()
    }

    /// Executes one loop iteration: map the input to `a_h`, blend with the
    /// assistance, update the belief from `a_h`, then integrate.
    pub fn step(&mut self, input: UserInput) -> Result<&StepRecord> {
        let mode = self.config.mode;
        let a_h = match (&input, mode.uses_latent()) {
            (UserInput::Latent(z), true) => {
                let model = self.model.as_deref().expect("latent modes have a model");
                check_dim(model.latent_dim, z.len())?;
                if z.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(Error::InvalidInput(format!("latent input {z:?} outside [-1, 1]")));
                }
                self.decode_candidates(&[z.as_slice()])?.pop().expect("one decode")
            }
            (UserInput::Raw2d(v), false) => self.retarget_input(*v)?,
            (UserInput::Latent(_), false) => {
                return Err(Error::InvalidInput(format!("mode {mode} expects a raw 2-DoF input")))
            }
            (UserInput::Raw2d(_), true) => {
                return Err(Error::InvalidInput(format!("mode {mode} expects a latent input")))
            }
        };
        let a_r = self.assist()?;
        // a_h is already clamped; without assistance it is executed as is.
        let a = if mode.assisted() { blend(&a_h, &a_r, self.alpha(), self.config.a_max)? } else { a_h.clone() };
        let b_next = belief::update(&self.b, &self.scene.arm, &self.s, &a_h, &self.goals, &self.config.belief)?;
        let s_next = step(&self.scene.arm, &self.s, &a)?;
        let g_star = self.g_star.unwrap_or_else(|| self.b.argmax());
        let mut lyapunov = lyapunov_check(&self.s, &self.b, &a_h, &self.goals, g_star, self.config.a_max)?;
        lyapunov.dv = 0.5 * (&self.goals[g_star].q_ref.q - &s_next.q).norm_squared() - lyapunov.v;
        let record = StepRecord {
            t: self.t,
            s: std::mem::replace(&mut self.s, s_next.clone()),
            input,
            a_h,
            a_r,
            a,
            b: std::mem::replace(&mut self.b, b_next.clone()),
            lyapunov,
            s_next,
            b_next,
        };
        self.t += 1;
        if !self.keep_log {
            self.log.records.clear();
        }
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }
}
