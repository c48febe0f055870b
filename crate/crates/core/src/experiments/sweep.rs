use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_boundedness, compute_metrics, lyapunov_violations, MetricParams};
use crate::control::{ControllerConfig, HumanView, Mode, Session, UserInput};
use crate::error::{Error, Result};
use crate::humans::{latent_candidates, retarget_candidates, DistanceSpace, HumanKind, HumanModel};
use crate::kinematics::JointState;
use crate::latent::LatentModel;
use crate::world::{Goal, Preference, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    FixedBeta,
    ChangeOfMind,
    Learner,
    NewGoal,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] =
        [SweepKind::FixedBeta, SweepKind::ChangeOfMind, SweepKind::Learner, SweepKind::NewGoal];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::FixedBeta => "fixed_beta",
            SweepKind::ChangeOfMind => "change_of_mind",
            SweepKind::Learner => "learner",
            SweepKind::NewGoal => "new_goal",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown sweep kind {s:?}")))
    }
}

/// One arm of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub mode: Mode,
    /// Decode with the entropy-regularized model.
    pub entropy: bool,
    /// Route the unseen goal through the transfer map.
    pub transfer: bool,
}

impl Condition {
    const fn new(name: &'static str, mode: Mode, entropy: bool, transfer: bool) -> Self {
        Condition { name, mode, entropy, transfer }
    }

    pub fn for_kind(kind: SweepKind) -> Vec<Condition> {
        let latent = [
            Condition::new("LA", Mode::Latent, false, false),
            Condition::new("LA+SA", Mode::LatentShared, false, false),
            Condition::new("LA+SA+Entropy", Mode::LatentShared, true, false),
        ];
        match kind {
            SweepKind::FixedBeta => {
                let mut c = vec![
                    Condition::new("R", Mode::Retarget, false, false),
                    Condition::new("R+SA", Mode::RetargetShared, false, false),
                ];
                c.extend(latent);
                c
            }
            SweepKind::ChangeOfMind | SweepKind::Learner => latent.to_vec(),
            SweepKind::NewGoal => vec![
                Condition::new("transfer", Mode::LatentShared, true, true),
                Condition::new("no_transfer", Mode::LatentShared, true, false),
            ],
        }
    }
}

/// Trained decoders with and without the entropy term.
#[derive(Clone, Debug)]
pub struct Models {
    pub plain: Arc<LatentModel>,
    pub entropy: Arc<LatentModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub horizon: usize,
    pub trials: usize,
    /// Normalized error counted as success.
    pub tol: f64,
    pub manipulation_threshold: f64,
    /// Belief in the decoy goal at which the robot counts as convinced.
    pub convince_threshold: f64,
    /// Belief in the true goal after which the error must stay bounded.
    pub settle_threshold: f64,
    pub fixed_betas: Vec<f64>,
    /// Change step as a fraction of the time the robot needs to become
    /// convinced of the decoy goal.
    pub change_fractions: Vec<f64>,
    pub change_beta: f64,
    pub learner_slopes: Vec<f64>,
    /// Displacements of the unseen goal in units of the inter-goal distance.
    pub new_goal_fractions: Vec<f64>,
    pub new_goal_beta: f64,
    pub high_beta: f64,
    pub latent_points: usize,
    pub retarget_points: usize,
    pub view: HumanView,
    pub space: DistanceSpace,
    pub boundedness_slack: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            horizon: 300,
            trials: 50,
            tol: 0.05,
            manipulation_threshold: 0.85,
            convince_threshold: 0.999,
            settle_threshold: 0.95,
            fixed_betas: vec![10.0, 75.0, 250.0, 1000.0],
            change_fractions: vec![0.75],
            change_beta: 1000.0,
            learner_slopes: vec![0.01, 0.05],
            new_goal_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            new_goal_beta: 1000.0,
            high_beta: 1000.0,
            latent_points: 21,
            retarget_points: 3,
            view: HumanView::Decoded,
            space: DistanceSpace::Joint,
            boundedness_slack: 1e-3,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 || self.latent_points == 0 || self.retarget_points == 0 {
            return Err(Error::Config("sweep horizon, trials and candidate grids must be positive".into()));
        }
        let all = self
            .fixed_betas
            .iter()
            .chain(&self.change_fractions)
            .chain(&self.learner_slopes)
            .chain(&self.new_goal_fractions)
            .chain([&self.change_beta, &self.new_goal_beta, &self.high_beta, &self.tol]);
        for v in all {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!("sweep values must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self, kind: SweepKind) -> &[f64] {
        match kind {
            SweepKind::FixedBeta => &self.fixed_betas,
            SweepKind::ChangeOfMind => &self.change_fractions,
            SweepKind::Learner => &self.learner_slopes,
            SweepKind::NewGoal => &self.new_goal_fractions,
        }
    }

    fn metric_params(&self) -> MetricParams {
        MetricParams { tol: self.tol, manipulation_threshold: self.manipulation_threshold }
    }
}

/// One rollout's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub kind: SweepKind,
    pub grid_value: f64,
    pub condition: String,
    pub trial: usize,
    pub goal: usize,
    pub theta: f64,
    pub final_error: f64,
    pub completion_time: usize,
    pub success: bool,
    pub cumulative_error: f64,
    pub alignment: Option<f64>,
    pub t4_steps: usize,
    pub lyapunov_violations: usize,
    pub settled_at: Option<usize>,
    pub increases_outside: usize,
    pub ball_exits: usize,
    pub change_step: Option<usize>,
}

/// Mean belief in the operator's goal at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub kind: SweepKind,
    pub grid_value: f64,
    pub condition: String,
    pub t: usize,
    pub mean_confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResults {
    pub rows: Vec<TrialRow>,
    pub traces: Vec<TraceRow>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SweepResults {
    pub fn extend(&mut self, other: SweepResults) {
        self.rows.extend(other.rows);
        self.traces.extend(other.traces);
    }

    /// Rows for one `(kind, grid value, condition)` cell, in trial order.
    pub fn cell(&self, kind: SweepKind, grid_value: f64, condition: &str) -> Vec<&TrialRow> {
        self.rows.iter().filter(|r| r.kind == kind && r.grid_value == grid_value && r.condition == condition).collect()
    }

    pub fn mean(&self, kind: SweepKind, grid_value: f64, condition: &str, f: impl Fn(&TrialRow) -> f64) -> f64 {
        let v: Vec<f64> = self.cell(kind, grid_value, condition).into_iter().map(f).collect();
        mean_se(&v).0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kind,grid_value,condition,trial,goal,theta,final_error,completion_time,success,cumulative_error,\
             alignment,t4_steps,lyapunov_violations,settled_at,increases_outside,ball_exits,change_step\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.kind.as_str(),
                r.grid_value,
                r.condition,
                r.trial,
                r.goal,
                r.theta,
                r.final_error,
                r.completion_time,
                r.success,
                r.cumulative_error,
                opt(&r.alignment),
                r.t4_steps,
                r.lyapunov_violations,
                opt(&r.settled_at),
                r.increases_outside,
                r.ball_exits,
                opt(&r.change_step)
            );
        }
        out
    }

    /// Means and standard errors per `(kind, grid value, condition)`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "kind,grid_value,condition,n,final_error_mean,final_error_se,completion_mean,completion_se,\
             success_rate,cumulative_error_mean,cumulative_error_se,alignment_mean,lyapunov_violations\n",
        );
        let mut seen: Vec<(SweepKind, f64, &str)> = Vec::new();
        for r in &self.rows {
            let key = (r.kind, r.grid_value, r.condition.as_str());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        for (kind, grid, cond) in seen {
            let cell = self.cell(kind, grid, cond);
            let col = |f: &dyn Fn(&TrialRow) -> f64| -> Vec<f64> { cell.iter().map(|r| f(r)).collect() };
            let (fe, fe_se) = mean_se(&col(&|r| r.final_error));
            let (ct, ct_se) = mean_se(&col(&|r| r.completion_time as f64));
            let (ce, ce_se) = mean_se(&col(&|r| r.cumulative_error));
            let success = mean_se(&col(&|r| if r.success { 1.0 } else { 0.0 })).0;
            let aligned: Vec<f64> = cell.iter().filter_map(|r| r.alignment).collect();
            let alignment = if aligned.is_empty() { String::new() } else { mean_se(&aligned).0.to_string() };
            let violations: usize = cell.iter().map(|r| r.lyapunov_violations).sum();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                kind.as_str(),
                grid,
                cond,
                cell.len(),
                fe,
                fe_se,
                ct,
                ct_se,
                success,
                ce,
                ce_se,
                alignment,
                violations
            );
        }
        out
    }

    pub fn traces_csv(&self) -> String {
        let mut out = String::from("kind,grid_value,condition,t,mean_confidence\n");
        for r in &self.traces {
            let _ = writeln!(out, "{},{},{},{},{}", r.kind.as_str(), r.grid_value, r.condition, r.t, r.mean_confidence);
        }
        out
    }
}

/// Seed for one trial, independent of how many other trials run.
fn trial_seed(seed: u64, kind: SweepKind, grid_index: usize, trial: usize) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{}/{grid_index}/{trial}", kind.as_str()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Lets `human` drive `session` for `horizon` steps.
pub fn run_rollout(
    session: &mut Session,
    human: &mut HumanModel,
    candidates: &[UserInput],
    horizon: usize,
) -> Result<()> {
    for _ in 0..horizon {
        let input = human.act(session, candidates)?;
        session.step(input)?;
    }
    Ok(())
}

/// Unit direction for displacing `slot`'s goal: orthogonal to the all-ones
/// vector (so the end-effector orientation is kept) and to the other goals.
pub fn new_goal_direction(scene: &Scene, slot: usize) -> Result<DVector<f64>> {
    let n = scene.dof();
    let g = &scene.goals[slot];
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
    for (i, other) in scene.goals.iter().enumerate() {
        if i != slot {
            basis.push(&other.q_ref.q - &g.q_ref.q);
        }
    }
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for v in basis {
        let mut w = v;
        for u in &ortho {
            w -= u * u.dot(&w);
        }
        if w.norm() > 1e-9 {
            ortho.push(w.normalize());
        }
    }
    let mut best: Option<DVector<f64>> = None;
    for i in 0..n {
        let mut w = DVector::zeros(n);
        w[i] = 1.0;
        for u in &ortho {
            w -= u * u.dot(&w);
        }
        if best.as_ref().map_or(true, |b| w.norm() > b.norm() + 1e-12) {
            best = Some(w);
        }
    }
    let best = best
        .filter(|b| b.norm() > 1e-9)
        .ok_or_else(|| Error::Config("no displacement direction is orthogonal to the goal constraints".into()))?;
    Ok(best.normalize())
}

struct Ctx<'a> {
    scene: &'a Arc<Scene>,
    models: &'a Models,
    controller: &'a ControllerConfig,
    config: &'a SweepConfig,
}

struct TrialSetup {
    goal: usize,
    theta: Preference,
    human_seed: u64,
}

struct Outcome {
    row: TrialRow,
    confidence: Vec<f64>,
}

impl Ctx<'_> {
    fn session(&self, cond: &Condition) -> Result<Session> {
        let model = if cond.entropy { &self.models.entropy } else { &self.models.plain };
        let controller = ControllerConfig { mode: cond.mode, entropy_model: cond.entropy, ..self.controller.clone() };
        Session::new(self.scene.clone(), Some(model.clone()), controller)
    }

    fn candidates(&self, mode: Mode) -> Vec<UserInput> {
        if mode.uses_latent() {
            latent_candidates(self.models.plain.latent_dim, self.config.latent_points)
        } else {
            retarget_candidates(self.config.retarget_points)
        }
    }

    fn human(&self, goals: &[Goal], kind: HumanKind, setup: &TrialSetup) -> Result<HumanModel> {
        let mut h = HumanModel::toward(self.scene, goals, kind, setup.goal, setup.theta, setup.human_seed)?;
        h.high_beta = self.config.high_beta;
        h.view = self.config.view;
        h.space = self.config.space;
        Ok(h)
    }

    fn run(
        &self,
        cond: &Condition,
        kind: HumanKind,
        setup: &TrialSetup,
        new_goal: Option<&Goal>,
    ) -> Result<(Session, HumanModel)> {
        let mut session = self.session(cond)?;
        let mut human_goals = self.scene.goals.clone();
        if let Some(g_new) = new_goal {
            human_goals[setup.goal] = g_new.clone();
            if cond.transfer {
                let slot = session.add_goal(g_new.clone())?;
                if slot != setup.goal {
                    return Err(Error::Config(format!("displaced goal maps to slot {slot}, expected {}", setup.goal)));
                }
            }
        }
        session.set_true_goal(Some(setup.goal))?;
        let mut human = self.human(&human_goals, kind, setup)?;
        run_rollout(&mut session, &mut human, &self.candidates(cond.mode), self.config.horizon)?;
        Ok((session, human))
    }

    #[allow(clippy::too_many_arguments)]
    fn outcome(
        &self,
        kind: SweepKind,
        grid_value: f64,
        trial: usize,
        cond: &Condition,
        human_kind: HumanKind,
        setup: &TrialSetup,
        new_goal: Option<&Goal>,
        change_step: Option<usize>,
    ) -> Result<Outcome> {
        let (session, human) = self.run(cond, human_kind, setup, new_goal)?;
        let log = &session.log;
        let d = self.scene.inter_goal_distance;
        let metrics =
            compute_metrics(log, &self.scene.arm, &human.s_star, setup.goal, d, &self.config.metric_params())?;
        let bounded = check_boundedness(
            log,
            session.goals(),
            setup.goal,
            d,
            self.config.settle_threshold,
            self.config.boundedness_slack,
        );
        let confidence = log.records.iter().map(|r| r.b_next.get(setup.goal)).collect();
        Ok(Outcome {
            row: TrialRow {
                kind,
                grid_value,
                condition: cond.name.to_string(),
                trial,
                goal: setup.goal,
                theta: setup.theta.theta(),
                final_error: metrics.final_state_error,
                completion_time: metrics.completion_time,
                success: metrics.success,
                cumulative_error: metrics.cumulative_error,
                alignment: metrics.preference_alignment,
                t4_steps: log.records.iter().filter(|r| r.lyapunov.t4_holds).count(),
                lyapunov_violations: lyapunov_violations(log),
                settled_at: bounded.settled_at,
                increases_outside: bounded.increases_outside,
                ball_exits: bounded.exits,
                change_step,
            },
            confidence,
        })
    }
}

/// Steps until an operator heading for `wrong_goal` with rationality `beta`
/// convinces the robot (belief at least `threshold`), under the no-entropy
/// model with assistance; `horizon` if it never does.
#[allow(clippy::too_many_arguments)]
pub fn time_to_convince(
    scene: &Arc<Scene>,
    model: &Arc<LatentModel>,
    controller: &ControllerConfig,
    config: &SweepConfig,
    wrong_goal: usize,
    theta: Preference,
    beta: f64,
    human_seed: u64,
) -> Result<usize> {
    let controller = ControllerConfig { mode: Mode::LatentShared, ..controller.clone() };
    let mut session = Session::new(scene.clone(), Some(model.clone()), controller)?;
    session.set_keep_log(false);
    let mut human = HumanModel::new(scene, HumanKind::Fixed { beta }, wrong_goal, theta, human_seed)?;
    human.view = config.view;
    human.space = config.space;
    let candidates = latent_candidates(model.latent_dim, config.latent_points);
    for t in 0..config.horizon {
        let input = human.act(&session, &candidates)?;
        let record = session.step(input)?;
        if record.b_next.get(wrong_goal) >= config.convince_threshold {
            return Ok(t + 1);
        }
    }
    Ok(config.horizon)
}

/// Runs every condition of `kind` over its grid with `config.trials` paired
/// trials per grid value. Trials draw the operator's goal, preference and
/// sampling seed from a per-trial seed shared by all conditions.
pub fn run_sweep(
    scene: &Arc<Scene>,
    models: &Models,
    controller: &ControllerConfig,
    config: &SweepConfig,
    kind: SweepKind,
    seed: u64,
) -> Result<SweepResults> {
    config.validate()?;
    controller.validate()?;
    for m in [&models.plain, &models.entropy] {
        if m.scene_hash != scene.hash() {
            return Err(Error::SceneMismatch { expected: scene.hash(), found: m.scene_hash.clone() });
        }
    }
    let ctx = Ctx { scene, models, controller, config };
    let conditions = Condition::for_kind(kind);
    let mut results = SweepResults::default();
    let num_goals = scene.num_goals();
    for (gi, &value) in config.grid(kind).iter().enumerate() {
        let mut traces: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for trial in 0..config.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, kind, gi, trial));
            let setup = TrialSetup {
                goal: rng.random_range(0..num_goals),
                theta: Preference::new(rng.random::<f64>())?,
                human_seed: rng.random(),
            };
            let mut change_step = None;
            let mut new_goal = None;
            let human_kind = match kind {
                SweepKind::FixedBeta => HumanKind::Fixed { beta: value },
                SweepKind::Learner => HumanKind::Learner { slope: value },
                SweepKind::ChangeOfMind => {
                    let wrong_goal = (setup.goal + 1) % num_goals;
                    let convince = time_to_convince(
                        scene,
                        &models.plain,
                        controller,
                        config,
                        wrong_goal,
                        setup.theta,
                        config.change_beta,
                        setup.human_seed,
                    )?;
                    let n = (value * convince as f64).floor() as usize;
                    change_step = Some(n);
                    HumanKind::ChangeOfMind { beta: config.change_beta, change_step: n, wrong_goal }
                }
                SweepKind::NewGoal => {
                    let u = new_goal_direction(scene, setup.goal)?;
                    let q = &scene.goals[setup.goal].q_ref.q + u * (value * scene.inter_goal_distance);
                    new_goal = Some(Goal::new(num_goals, &scene.arm, JointState::new(q))?);
                    HumanKind::Fixed { beta: config.new_goal_beta }
                }
            };
            for (ci, cond) in conditions.iter().enumerate() {
                let out =
                    ctx.outcome(kind, value, trial, cond, human_kind.clone(), &setup, new_goal.as_ref(), change_step)?;
                let acc = traces.entry(ci).or_insert_with(|| vec![0.0; out.confidence.len()]);
                for (a, c) in acc.iter_mut().zip(&out.confidence) {
                    *a += c / config.trials as f64;
                }
                results.rows.push(out.row);
            }
        }
        for (ci, trace) in traces {
            for (t, mean) in trace.into_iter().enumerate() {
                results.traces.push(TraceRow {
                    kind,
                    grid_value: value,
                    condition: conditions[ci].name.to_string(),
                    t,
                    mean_confidence: mean,
                });
            }
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{make_two_cup_scene, SceneConfig};

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        let a = trial_seed(1, SweepKind::FixedBeta, 0, 0);
        assert_eq!(a, trial_seed(1, SweepKind::FixedBeta, 0, 0));
        assert_ne!(a, trial_seed(1, SweepKind::FixedBeta, 0, 1));
        assert_ne!(a, trial_seed(1, SweepKind::Learner, 0, 0));
        assert_ne!(a, trial_seed(2, SweepKind::FixedBeta, 0, 0));
    }

    #[test]
    fn displacement_direction_constraints() {
        let scene = make_two_cup_scene(&SceneConfig::default()).unwrap();
        for slot in 0..2 {
            let u = new_goal_direction(&scene, slot).unwrap();
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!(u.sum().abs() < 1e-9);
            let other = &scene.goals[1 - slot].q_ref.q - &scene.goals[slot].q_ref.q;
            assert!(u.dot(&other).abs() < 1e-9);
        }
    }
}
