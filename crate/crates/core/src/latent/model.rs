use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Layout, Trace};
use crate::belief::Belief;
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{ArmSpec, JointState, RobotAction};
use crate::world::Goal;

pub const MODEL_FORMAT: &str = "latassist-model";
pub const MODEL_VERSION: u32 = 1;

/// Per-dimension affine input normalization, fixed from the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub s_mean: Vec<f64>,
    pub s_scale: Vec<f64>,
    pub a_mean: Vec<f64>,
    pub a_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Normalization {
            s_mean: vec![0.0; state_dim],
            s_scale: vec![1.0; state_dim],
            a_mean: vec![0.0; action_dim],
            a_scale: vec![1.0; action_dim],
        }
    }

    /// Mean and standard deviation of each column; tiny deviations map to 1.
    pub fn fit<'a>(states: impl Iterator<Item = (&'a JointState, &'a RobotAction)>, n: usize, m: usize) -> Self {
        let mut count = 0usize;
        let (mut s_sum, mut s_sq) = (vec![0.0; n], vec![0.0; n]);
        let (mut a_sum, mut a_sq) = (vec![0.0; m], vec![0.0; m]);
        for (s, a) in states {
            count += 1;
            for (i, v) in s.as_slice().iter().enumerate() {
                s_sum[i] += v;
                s_sq[i] += v * v;
            }
            for (i, v) in a.as_slice().iter().enumerate() {
                a_sum[i] += v;
                a_sq[i] += v * v;
            }
        }
        if count == 0 {
            return Normalization::identity(n, m);
        }
        let c = count as f64;
        let stats = |sum: Vec<f64>, sq: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
            let scale = sq
                .iter()
                .zip(&mean)
                .map(|(q, m)| {
                    let sd = (q / c - m * m).max(0.0).sqrt();
                    if sd > 1e-6 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, scale)
        };
        let (s_mean, s_scale) = stats(s_sum, s_sq);
        let (a_mean, a_scale) = stats(a_sum, a_sq);
        Normalization { s_mean, s_scale, a_mean, a_scale }
    }

    fn push_state(&self, out: &mut Vec<f64>, s: &[f64]) {
        out.extend(s.iter().zip(&self.s_mean).zip(&self.s_scale).map(|((v, m), k)| (v - m) / k));
    }

    fn push_action(&self, out: &mut Vec<f64>, a: &[f64]) {
        out.extend(a.iter().zip(&self.a_mean).zip(&self.a_scale).map(|((v, m), k)| (v - m) / k));
    }
}

/// `a_max * tanh(|y|) * y / |y|`: a smooth map onto the open ball of radius `a_max`.
pub(crate) fn squash(y: &[f64], a_max: f64, out: &mut [f64]) {
    let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = if r < 1e-4 { 1.0 - r * r / 3.0 } else { r.tanh() / r };
    for (o, v) in out.iter_mut().zip(y) {
        *o = a_max * g * v;
    }
}

/// Gradient of [`squash`] with respect to `y`, given the upstream gradient.
pub(crate) fn squash_backward(y: &[f64], a_max: f64, d_out: &[f64], d_y: &mut [f64]) {
    let r2 = y.iter().map(|v| v * v).sum::<f64>();
    let r = r2.sqrt();
    let (g, gp_over_r) = if r < 1e-4 {
        (1.0 - r2 / 3.0, -2.0 / 3.0 + 0.8 * r2)
    } else {
        let t = r.tanh();
        let sech2 = 1.0 - t * t;
        (t / r, (r * sech2 - t) / (r2 * r))
    };
    let dot: f64 = y.iter().zip(d_out).map(|(a, b)| a * b).sum();
    for ((dy, v), d) in d_y.iter_mut().zip(y).zip(d_out) {
        *dy = a_max * (g * d + gp_over_r * dot * v);
    }
}

/// Conditional autoencoder: encoder `(a, s, b) -> z`, decoder `(z, s, b) -> a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentModel {
    pub format: String,
    pub version: u32,
    pub scene_hash: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub num_goals: usize,
    pub a_max: f64,
    pub hidden: Vec<usize>,
    pub norm: Normalization,
    pub encoder: Layout,
    pub decoder: Layout,
    /// Encoder parameters followed by decoder parameters.
    pub params: Vec<f64>,
}

impl LatentModel {
    /// Allocates the layouts; parameters start at zero.
    pub fn new(
        scene_hash: String,
        state_dim: usize,
        num_goals: usize,
        latent_dim: usize,
        hidden: Vec<usize>,
        a_max: f64,
    ) -> Result<Self> {
        let action_dim = state_dim;
        if latent_dim == 0 || latent_dim >= action_dim {
            return Err(Error::Config(format!("latent dimension {latent_dim} must be in [1, {action_dim})")));
        }
        if num_goals == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config("model needs goals and non-empty hidden layers".into()));
        }
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::Config(format!("a_max must be positive, got {a_max}")));
        }
        let mut enc_sizes = vec![action_dim + state_dim + num_goals];
        enc_sizes.extend(&hidden);
        enc_sizes.push(latent_dim);
        let mut dec_sizes = vec![latent_dim + state_dim + num_goals];
        dec_sizes.extend(&hidden);
        dec_sizes.push(action_dim);
        let encoder = Layout::new(enc_sizes);
        let decoder = Layout::new(dec_sizes);
        let params = vec![0.0; encoder.num_params() + decoder.num_params()];
        Ok(LatentModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            scene_hash,
            state_dim,
            action_dim,
            latent_dim,
            num_goals,
            a_max,
            hidden,
            norm: Normalization::identity(state_dim, action_dim),
            encoder,
            decoder,
            params,
        })
    }

    pub fn enc_params(&self) -> &[f64] {
        &self.params[..self.encoder.num_params()]
    }

    pub fn dec_params(&self) -> &[f64] {
        &self.params[self.encoder.num_params()..]
    }

    pub(crate) fn split_params(params: &[f64], enc_len: usize) -> (&[f64], &[f64]) {
        params.split_at(enc_len)
    }

    fn check_context(&self, s: &JointState, b: &Belief) -> Result<()> {
        check_dim(self.state_dim, s.len())?;
        check_dim(self.num_goals, b.len())
    }

    pub(crate) fn encoder_row(&self, out: &mut Vec<f64>, a: &[f64], s: &[f64], b: &[f64]) {
        self.norm.push_action(out, a);
        self.norm.push_state(out, s);
        out.extend_from_slice(b);
    }

    pub(crate) fn decoder_row(&self, out: &mut Vec<f64>, z: &[f64], s: &[f64], b: &[f64]) {
        out.extend_from_slice(z);
        self.norm.push_state(out, s);
        out.extend_from_slice(b);
    }

    /// Latent code in `[-1, 1]^d`.
    pub fn encode(&self, a: &RobotAction, s: &JointState, b: &Belief) -> Result<Vec<f64>> {
        self.check_context(s, b)?;
        check_dim(self.action_dim, a.len())?;
        let mut x = Vec::with_capacity(self.encoder.input_width());
        self.encoder_row(&mut x, a.as_slice(), s.as_slice(), b.probs());
        let mut z = self.encoder.forward(self.enc_params(), &x, 1);
        z.iter_mut().for_each(|v| *v = v.tanh());
        Ok(z)
    }

    /// Decoded action for latent input `z`; its norm is below `a_max`.
    pub fn decode(&self, z: &[f64], s: &JointState, b: &Belief) -> Result<RobotAction> {
        Ok(self.decode_many(&[z], s, b)?.pop().expect("one row"))
    }

    /// Decodes several latent inputs in one shared context.
    pub fn decode_many<Z: AsRef<[f64]>>(&self, zs: &[Z], s: &JointState, b: &Belief) -> Result<Vec<RobotAction>> {
        self.check_context(s, b)?;
        let width = self.decoder.input_width();
        let mut x = Vec::with_capacity(width * zs.len());
        for z in zs {
            let z = z.as_ref();
            check_dim(self.latent_dim, z.len())?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("latent input must be finite".into()));
            }
            self.decoder_row(&mut x, z, s.as_slice(), b.probs());
        }
        let y = self.decoder.forward(self.dec_params(), &x, zs.len());
        let m = self.action_dim;
        Ok(y.chunks(m)
            .map(|row| {
                let mut a = vec![0.0; m];
                squash(row, self.a_max, &mut a);
                RobotAction::from(a)
            })
            .collect())
    }

    pub(crate) fn decoder_trace(&self, params: &[f64], x: Vec<f64>, rows: usize) -> Trace {
        let (_, dec) = Self::split_params(params, self.encoder.num_params());
        self.decoder.forward_trace(dec, x, rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    /// Parses a model document and checks its internal consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: LatentModel =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parse { line: 0, message: m.to_string() });
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return bad("unsupported model format or version");
        }
        let reference = match LatentModel::new(
            self.scene_hash.clone(),
            self.state_dim,
            self.num_goals,
            self.latent_dim,
            self.hidden.clone(),
            self.a_max,
        ) {
            Ok(m) => m,
            Err(e) => return bad(&e.to_string()),
        };
        if reference.encoder != self.encoder || reference.decoder != self.decoder {
            return bad("layer sizes disagree with model dimensions");
        }
        if self.params.len() != reference.params.len() || self.params.iter().any(|p| !p.is_finite()) {
            return bad("parameter array has wrong length or non-finite values");
        }
        let n = &self.norm;
        if n.s_mean.len() != self.state_dim
            || n.s_scale.len() != self.state_dim
            || n.a_mean.len() != self.action_dim
            || n.a_scale.len() != self.action_dim
            || n.s_scale.iter().chain(&n.a_scale).any(|v| !(v.is_finite() && *v > 0.0))
            || n.s_mean.iter().chain(&n.a_mean).any(|v| !v.is_finite())
        {
            return bad("invalid normalization statistics");
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Loads a model and rejects it unless it was trained for `expected_scene_hash`.
    pub fn load(path: impl AsRef<Path>, expected_scene_hash: &str) -> Result<Self> {
        let model = LatentModel::from_json(&fs::read_to_string(path)?)?;
        if model.scene_hash != expected_scene_hash {
            return Err(Error::SceneMismatch { expected: expected_scene_hash.to_string(), found: model.scene_hash });
        }
        Ok(model)
    }
}

/// Uniform grid over `[-1, 1]^d` with `per_axis` points along each axis.
pub fn z_grid(latent_dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = match per_axis {
        0 => return Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    };
    let mut grid = vec![Vec::new()];
    for _ in 0..latent_dim {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    grid
}

/// Per-latent softmax over goals of `kappa * progress`, where progress is the
/// drop in joint distance to the goal after one step of the decoded action.
/// Returns the row-major `|z| × |G|` score matrix.
pub(crate) fn scores_from_actions(
    arm: &ArmSpec,
    s: &JointState,
    actions: &[RobotAction],
    goals: &[Goal],
    kappa: f64,
) -> Vec<f64> {
    let g = goals.len();
    let before: Vec<f64> = goals.iter().map(|goal| (&goal.q_ref.q - &s.q).norm()).collect();
    let mut scores = Vec::with_capacity(actions.len() * g);
    for a in actions {
        let next = &s.q + &a.dq * arm.dt();
        let logits: Vec<f64> =
            goals.iter().zip(&before).map(|(goal, d0)| kappa * (d0 - (&goal.q_ref.q - &next).norm())).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        scores.extend(exps.iter().map(|e| e / sum));
    }
    scores
}

/// Share of latent inputs at context `(s, b)` whose decoded actions convey
/// each goal: the average over `z_grid` of the per-latent goal scores.
pub fn goal_distribution(
    model: &LatentModel,
    arm: &ArmSpec,
    s: &JointState,
    b: &Belief,
    goals: &[Goal],
    z_grid: &[Vec<f64>],
    kappa_eta: f64,
) -> Result<Vec<f64>> {
    if z_grid.is_empty() {
        return Err(Error::InvalidInput("empty latent grid".into()));
    }
    let actions = model.decode_many(z_grid, s, b)?;
    let scores = scores_from_actions(arm, s, &actions, goals, kappa_eta);
    let g = goals.len();
    let mut p = vec![0.0; g];
    for row in scores.chunks(g) {
        for (pi, v) in p.iter_mut().zip(row) {
            *pi += v;
        }
    }
    let k = z_grid.len() as f64;
    p.iter_mut().for_each(|v| *v /= k);
    Ok(p)
}
