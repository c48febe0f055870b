//! Scripted reach-then-manipulate demonstrations and their on-disk format.
//!
//! File layout: one JSON header line, then one record per line. Each record
//! is a flat numeric array `[n, q_1..q_n, dq_1..dq_n, b_1..b_G]`. Records
//! appear in trajectory order; the header lists every trajectory with its
//! record count.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::belief::{self, Belief, BeliefParams};
use crate::error::{Error, Result};
use crate::kinematics::{step, JointState, RobotAction};
use crate::world::{target_state, Preference, Scene};

pub const DEMO_FORMAT: &str = "latassist-demos";
pub const DEMO_VERSION: u32 = 1;

/// One `(s, a, b)` training example.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoTuple {
    pub s: JointState,
    pub a: RobotAction,
    pub b: Belief,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub goal: usize,
    pub theta: f64,
    pub tuples: Vec<DemoTuple>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryInfo {
    pub goal: usize,
    pub theta: f64,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    scene_hash: String,
    n: usize,
    goals: usize,
    seed: u64,
    trajectories: Vec<TrajectoryInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub scene_hash: String,
    pub dof: usize,
    pub num_goals: usize,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.tuples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tuples(&self) -> impl Iterator<Item = &DemoTuple> {
        self.trajectories.iter().flat_map(|t| t.tuples.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    /// Repetitions per (goal, theta); only differ when noise is enabled.
    pub per_goal: usize,
    pub theta_samples: usize,
    pub gain: f64,
    /// Demonstrator speed limit, kept below the controller's clamp so decoded
    /// motions leave headroom for assistance.
    pub a_max: f64,
    pub tol_reach: f64,
    pub max_phase_steps: usize,
    pub noise_std: f64,
    pub belief: BeliefParams,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            per_goal: 1,
            theta_samples: 9,
            gain: 1.0,
            a_max: 0.5,
            tol_reach: 1e-2,
            max_phase_steps: 2000,
            noise_std: 0.0,
            belief: BeliefParams::default(),
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_goal == 0 || self.theta_samples == 0 {
            return Err(Error::Config("per_goal and theta_samples must be at least 1".into()));
        }
        for (name, v) in [("gain", self.gain), ("a_max", self.a_max), ("tol_reach", self.tol_reach)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("demos.{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("demos.noise_std must be non-negative".into()));
        }
        self.belief.validate()
    }
}

/// Evenly spaced preferences in `[0, 1]`; a single sample sits at 0.5.
pub fn theta_grid(samples: usize) -> Vec<f64> {
    match samples {
        0 => Vec::new(),
        1 => vec![0.5],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Bounded proportional command toward `target`.
pub fn proportional_action(s: &JointState, target: &JointState, gain: f64, a_max: f64) -> RobotAction {
    RobotAction::new((&target.q - &s.q) * gain).clamped(a_max)
}

/// Generates demonstrations for every goal and preference grid value.
///
/// Each trajectory reaches the goal's reference pose and then moves to the
/// preferred grasp pose. Beliefs are annotated by running the goal filter on
/// the demonstrated actions from a uniform prior.
pub fn generate_demos(scene: &Scene, config: &DemoConfig, seed: u64) -> Result<DemoSet> {
    config.validate()?;
    let thetas = theta_grid(config.theta_samples);
    let mut trajectories = Vec::new();
    let mut stream = 0u64;
    for (gi, goal) in scene.goals.iter().enumerate() {
        for _ in 0..config.per_goal {
            for &theta in &thetas {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                stream += 1;
                let target = target_state(scene, goal, Preference::new(theta)?)?;
                let mut traj = Trajectory { goal: gi, theta, tuples: Vec::new() };
                let mut s = scene.start.clone();
                let mut b = Belief::uniform(scene.num_goals())?;
                for phase_target in [&goal.q_ref, &target] {
                    let mut steps = 0;
                    while (&phase_target.q - &s.q).norm() > config.tol_reach {
                        if steps == config.max_phase_steps {
                            return Err(Error::Generation { goal: gi, theta, steps });
                        }
                        let mut a = proportional_action(&s, phase_target, config.gain, config.a_max);
                        if config.noise_std > 0.0 {
                            let normal =
                                Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
                            a.dq.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                            a = a.clamped(config.a_max);
                        }
                        let next_b = belief::update(&b, &scene.arm, &s, &a, &scene.goals, &config.belief)?;
                        let next_s = step(&scene.arm, &s, &a)?;
                        traj.tuples.push(DemoTuple { s, a, b });
                        s = next_s;
                        b = next_b;
                        steps += 1;
                    }
                }
                trajectories.push(traj);
            }
        }
    }
    Ok(DemoSet { scene_hash: scene.hash(), dof: scene.dof(), num_goals: scene.num_goals(), seed, trajectories })
}

/// Serializes `set` in the line-delimited record format.
pub fn write_demos<W: Write>(set: &DemoSet, mut w: W) -> Result<()> {
    let header = Header {
        format: DEMO_FORMAT.to_string(),
        version: DEMO_VERSION,
        scene_hash: set.scene_hash.clone(),
        n: set.dof,
        goals: set.num_goals,
        seed: set.seed,
        trajectories: set
            .trajectories
            .iter()
            .map(|t| TrajectoryInfo { goal: t.goal, theta: t.theta, records: t.tuples.len() })
            .collect(),
    };
    serde_json::to_writer(&mut w, &header).map_err(io_error)?;
    w.write_all(b"\n")?;
    let mut record = Vec::with_capacity(1 + 2 * set.dof + set.num_goals);
    for t in set.tuples() {
        record.clear();
        record.push(set.dof as f64);
        record.extend_from_slice(t.s.as_slice());
        record.extend_from_slice(t.a.as_slice());
        record.extend_from_slice(t.b.probs());
        serde_json::to_writer(&mut w, &record).map_err(io_error)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_error(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses the line-delimited record format.
pub fn read_demos<R: Read>(r: R) -> Result<DemoSet> {
    let mut lines = BufReader::new(r).lines();
    let header_line = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != DEMO_FORMAT || header.version != DEMO_VERSION {
        return Err(parse_err(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.n == 0 || header.goals == 0 {
        return Err(parse_err(1, "header needs n >= 1 and goals >= 1"));
    }
    let n = header.n;
    let width = 1 + 2 * n + header.goals;
    let mut line_no = 1;
    let mut trajectories = Vec::with_capacity(header.trajectories.len());
    for info in &header.trajectories {
        if info.goal >= header.goals {
            return Err(parse_err(1, format!("trajectory goal {} out of range", info.goal)));
        }
        let mut tuples = Vec::with_capacity(info.records.min(1 << 16));
        for _ in 0..info.records {
            line_no += 1;
            let line = match lines.next() {
                Some(l) => l?,
                None => return Err(parse_err(line_no, "unexpected end of file (truncated record stream)")),
            };
            let values: Vec<f64> =
                serde_json::from_str(&line).map_err(|e| parse_err(line_no, format!("bad record: {e}")))?;
            if values.len() != width {
                return Err(parse_err(line_no, format!("record has {} fields, expected {width}", values.len())));
            }
            if values[0] != n as f64 {
                return Err(parse_err(line_no, format!("record dimension {} != header n {n}", values[0])));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(line_no, "non-finite value"));
            }
            let s = JointState::from_slice(&values[1..1 + n]);
            let a = RobotAction::from_slice(&values[1 + n..1 + 2 * n]);
            let b = Belief::from_probs(values[1 + 2 * n..].to_vec()).map_err(|e| parse_err(line_no, e.to_string()))?;
            tuples.push(DemoTuple { s, a, b });
        }
        trajectories.push(Trajectory { goal: info.goal, theta: info.theta, tuples });
    }
    if let Some(extra) = lines.next() {
        let extra = extra?;
        if !extra.trim().is_empty() {
            return Err(parse_err(line_no + 1, "trailing data after last record"));
        }
    }
    Ok(DemoSet { scene_hash: header.scene_hash, dof: n, num_goals: header.goals, seed: header.seed, trajectories })
}

pub fn save_demos(set: &DemoSet, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_demos(set, std::io::BufWriter::new(file))
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<DemoSet> {
    read_demos(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{make_two_cup_scene, SceneConfig};

    fn scene() -> Scene {
        make_two_cup_scene(&SceneConfig::default()).unwrap()
    }

    fn small_config() -> DemoConfig {
        DemoConfig { theta_samples: 1, ..DemoConfig::default() }
    }

    #[test]
    fn one_trajectory_per_goal_reaching_its_target() {
        let scene = scene();
        let set = generate_demos(&scene, &small_config(), 3).unwrap();
        assert_eq!(set.trajectories.len(), 2);
        for traj in &set.trajectories {
            // Re-simulate the last recorded step to get the terminal state.
            let last = traj.tuples.last().unwrap();
            let end = step(&scene.arm, &last.s, &last.a).unwrap();
            let target = target_state(&scene, &scene.goals[traj.goal], Preference::new(traj.theta).unwrap()).unwrap();
            assert!((&end.q - &target.q).norm() <= 1e-2);
        }
    }

    #[test]
    fn actions_respect_bound_and_beliefs_replay() {
        let scene = scene();
        let cfg = DemoConfig { theta_samples: 3, ..DemoConfig::default() };
        let set = generate_demos(&scene, &cfg, 0).unwrap();
        for traj in &set.trajectories {
            assert_eq!(traj.tuples[0].b, Belief::uniform(2).unwrap());
            for w in traj.tuples.windows(2) {
                assert!(w[0].a.norm() <= cfg.a_max + 1e-12);
                let replay = belief::update(&w[0].b, &scene.arm, &w[0].s, &w[0].a, &scene.goals, &cfg.belief).unwrap();
                assert_eq!(replay, w[1].b);
            }
        }
    }

    #[test]
    fn theta_grid_values() {
        assert_eq!(theta_grid(1), vec![0.5]);
        assert_eq!(theta_grid(3), vec![0.0, 0.5, 1.0]);
        assert_eq!(theta_grid(9).len(), 9);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let scene = scene();
        let cfg = DemoConfig { theta_samples: 2, noise_std: 0.05, ..DemoConfig::default() };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_demos(&generate_demos(&scene, &cfg, 11).unwrap(), &mut a).unwrap();
        write_demos(&generate_demos(&scene, &cfg, 11).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_demos(&generate_demos(&scene, &cfg, 12).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn round_trip_is_lossless() {
        let set = generate_demos(&scene(), &small_config(), 5).unwrap();
        let mut bytes = Vec::new();
        write_demos(&set, &mut bytes).unwrap();
        assert_eq!(read_demos(bytes.as_slice()).unwrap(), set);
    }

    #[test]
    fn empty_set_is_valid() {
        let set = DemoSet { scene_hash: "x".into(), dof: 5, num_goals: 2, seed: 0, trajectories: vec![] };
        let mut bytes = Vec::new();
        write_demos(&set, &mut bytes).unwrap();
        assert_eq!(bytes.iter().filter(|c| **c == b'\n').count(), 1);
        assert_eq!(read_demos(bytes.as_slice()).unwrap(), set);
    }

    #[test]
    fn truncated_file_reports_line() {
        let set = generate_demos(&scene(), &small_config(), 5).unwrap();
        let mut bytes = Vec::new();
        write_demos(&set, &mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let keep: Vec<&str> = text.lines().take(4).collect();
        let err = read_demos(keep.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");

        // Cut in the middle of a record.
        let cut = &text[..text.len() - 20];
        assert!(matches!(read_demos(cut.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_records_are_rejected() {
        let header = r#"{"format":"latassist-demos","version":1,"scene_hash":"h","n":2,"goals":2,"seed":0,"trajectories":[{"goal":0,"theta":0.5,"records":1}]}"#;
        let bad_width = format!("{header}\n[2,0,0,1,1,0.5]\n");
        assert!(matches!(read_demos(bad_width.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let bad_dim = format!("{header}\n[3,0,0,1,1,0.5,0.5]\n");
        assert!(matches!(read_demos(bad_dim.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let bad_belief = format!("{header}\n[2,0,0,1,1,0.9,0.5]\n");
        assert!(matches!(read_demos(bad_belief.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let ok = format!("{header}\n[2,0,0,1,1,0.5,0.5]\n");
        assert_eq!(read_demos(ok.as_bytes()).unwrap().len(), 1);
        assert!(matches!(read_demos("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
