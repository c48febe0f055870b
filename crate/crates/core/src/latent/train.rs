//! Reconstruction plus goal-entropy objective, its gradient, and training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{scores_from_actions, squash, squash_backward, z_grid, LatentModel, Normalization};
use crate::belief::Belief;
use crate::dataset::{DemoSet, DemoTuple};
use crate::error::{Error, Result};
use crate::kinematics::{JointState, RobotAction};
use crate::world::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the goal-entropy term; zero trains a plain autoencoder.
    pub lambda: f64,
    pub kappa_eta: f64,
    /// Points per latent axis of the grid the entropy term sums over.
    pub z_grid_points: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub a_max: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub context_samples: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            kappa_eta: 10.0,
            z_grid_points: 21,
            latent_dim: 1,
            hidden: vec![64, 64],
            a_max: 1.0,
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 256,
            context_samples: 8,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("kappa_eta", self.kappa_eta), ("a_max", self.a_max), ("learning_rate", self.learning_rate)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("train.lambda must be non-negative, got {}", self.lambda)));
        }
        if self.z_grid_points == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::Config("train grid, batch size and latent dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("train.holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        z_grid(self.latent_dim, self.z_grid_points)
    }
}

/// Loss components for one evaluation or one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub recon: f64,
    pub entropy_term: f64,
    pub total: f64,
}

/// A `(s, b)` pair at which the entropy term is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub s: JointState,
    pub b: Belief,
}

pub struct TrainOutcome {
    pub model: LatentModel,
    pub history: Vec<LossReport>,
    /// Mean squared reconstruction error on the held-out tuples.
    pub heldout_recon: f64,
    pub heldout_count: usize,
}

/// Mean squared encode-decode reconstruction error over `tuples`.
pub fn reconstruction_error(model: &LatentModel, tuples: &[&DemoTuple]) -> Result<f64> {
    if tuples.is_empty() {
        return Err(Error::InvalidInput("reconstruction error of an empty set".into()));
    }
    let mut total = 0.0;
    for t in tuples {
        let z = model.encode(&t.a, &t.s, &t.b)?;
        let a = model.decode(&z, &t.s, &t.b)?;
        total += (&a.dq - &t.a.dq).norm_squared();
    }
    Ok(total / tuples.len() as f64)
}

/// Evaluates the objective at `model.params` and its gradient.
pub fn loss(
    model: &LatentModel,
    scene: &Scene,
    batch: &[&DemoTuple],
    contexts: &[Context],
    grid: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(LossReport, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss of an empty batch".into()));
    }
    let mut grad = vec![0.0; model.params.len()];
    let recon = recon_loss(model, batch, &mut grad);
    let entropy_term = if config.lambda > 0.0 || !contexts.is_empty() {
        entropy_loss(model, scene, contexts, grid, config, &mut grad)?
    } else {
        0.0
    };
    Ok((LossReport { epoch: 0, recon, entropy_term, total: recon + config.lambda * entropy_term }, grad))
}

fn recon_loss(model: &LatentModel, batch: &[&DemoTuple], grad: &mut [f64]) -> f64 {
    let rows = batch.len();
    let (d, m) = (model.latent_dim, model.action_dim);
    let enc_len = model.encoder.num_params();
    let (enc_p, dec_p) = LatentModel::split_params(&model.params, enc_len);

    let mut x_enc = Vec::with_capacity(rows * model.encoder.input_width());
    for t in batch {
        model.encoder_row(&mut x_enc, t.a.as_slice(), t.s.as_slice(), t.b.probs());
    }
    let enc_trace = model.encoder.forward_trace(enc_p, x_enc, rows);
    let z: Vec<f64> = enc_trace.output().iter().map(|u| u.tanh()).collect();

    let mut x_dec = Vec::with_capacity(rows * model.decoder.input_width());
    for (t, zr) in batch.iter().zip(z.chunks(d)) {
        model.decoder_row(&mut x_dec, zr, t.s.as_slice(), t.b.probs());
    }
    let dec_trace = model.decoder.forward_trace(dec_p, x_dec, rows);

    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut d_y = vec![0.0; rows * m];
    let mut a_hat = vec![0.0; m];
    let mut d_a = vec![0.0; m];
    for (r, t) in batch.iter().enumerate() {
        let y = &dec_trace.output()[r * m..(r + 1) * m];
        squash(y, model.a_max, &mut a_hat);
        for i in 0..m {
            let e = a_hat[i] - t.a.dq[i];
            total += e * e;
            d_a[i] = 2.0 * e * scale;
        }
        squash_backward(y, model.a_max, &d_a, &mut d_y[r * m..(r + 1) * m]);
    }

    let (g_enc, g_dec) = grad.split_at_mut(enc_len);
    let d_x_dec = model.decoder.backward(dec_p, &dec_trace, d_y, g_dec);
    let width = model.decoder.input_width();
    let mut d_u = vec![0.0; rows * d];
    for r in 0..rows {
        for k in 0..d {
            let zk = z[r * d + k];
            d_u[r * d + k] = d_x_dec[r * width + k] * (1.0 - zk * zk);
        }
    }
    model.encoder.backward(enc_p, &enc_trace, d_u, g_enc);
    total * scale
}

/// Mean over contexts of `sum_g p(g) log p(g)`; accumulates `lambda` times its gradient.
fn entropy_loss(
    model: &LatentModel,
    scene: &Scene,
    contexts: &[Context],
    grid: &[Vec<f64>],
    config: &TrainConfig,
    grad: &mut [f64],
) -> Result<f64> {
    if contexts.is_empty() {
        return Ok(0.0);
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty latent grid".into()));
    }
    let (k, m, g) = (grid.len(), model.action_dim, scene.num_goals());
    let rows = contexts.len() * k;
    let enc_len = model.encoder.num_params();
    let mut x = Vec::with_capacity(rows * model.decoder.input_width());
    for c in contexts {
        for z in grid {
            model.decoder_row(&mut x, z, c.s.as_slice(), c.b.probs());
        }
    }
    let trace = model.decoder_trace(&model.params, x, rows);
    let dt = scene.arm.dt();
    let kappa = config.kappa_eta;
    let weight = config.lambda / contexts.len() as f64;

    let mut total = 0.0;
    let mut d_y = vec![0.0; rows * m];
    for (ci, c) in contexts.iter().enumerate() {
        let ys = &trace.output()[ci * k * m..(ci + 1) * k * m];
        let actions: Vec<RobotAction> = ys
            .chunks(m)
            .map(|y| {
                let mut a = vec![0.0; m];
                squash(y, model.a_max, &mut a);
                RobotAction::from(a)
            })
            .collect();
        let eta = scores_from_actions(&scene.arm, &c.s, &actions, &scene.goals, kappa);
        let mut p = vec![0.0; g];
        for row in eta.chunks(g) {
            for (pi, v) in p.iter_mut().zip(row) {
                *pi += v / k as f64;
            }
        }
        total += p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        if weight == 0.0 {
            continue;
        }
        // d/dp of sum p log p is log p + 1.
        let d_p: Vec<f64> = p.iter().map(|v| weight * (v.max(1e-300).ln() + 1.0) / k as f64).collect();
        for (zi, a) in actions.iter().enumerate() {
            let row = ci * k + zi;
            let eta_z = &eta[zi * g..(zi + 1) * g];
            let mean: f64 = eta_z.iter().zip(&d_p).map(|(e, d)| e * d).sum();
            let next = &c.s.q + &a.dq * dt;
            let mut d_a = vec![0.0; m];
            for (gi, goal) in scene.goals.iter().enumerate() {
                let d_logit = eta_z[gi] * (d_p[gi] - mean);
                let diff = &goal.q_ref.q - &next;
                let dist = diff.norm();
                if dist > 1e-12 {
                    let f = d_logit * kappa * dt / dist;
                    for i in 0..m {
                        d_a[i] += f * diff[i];
                    }
                }
            }
            let y = &ys[zi * m..(zi + 1) * m];
            squash_backward(y, model.a_max, &d_a, &mut d_y[row * m..(row + 1) * m]);
        }
    }
    if weight != 0.0 {
        let (_, dec_p) = LatentModel::split_params(&model.params, enc_len);
        model.decoder.backward(dec_p, &trace, d_y, &mut grad[enc_len..]);
    }
    Ok(total / contexts.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Entropy contexts: demo states paired in turn with a uniform, a one-hot
/// and the demo's own belief.
pub fn sample_contexts<R: Rng>(rng: &mut R, pool: &[&DemoTuple], count: usize, num_goals: usize) -> Vec<Context> {
    (0..count)
        .map(|i| {
            let t = pool[rng.random_range(0..pool.len())];
            let b = match i % 3 {
                0 => Belief::uniform(num_goals).expect("goals"),
                1 => Belief::one_hot(num_goals, rng.random_range(0..num_goals)).expect("goals"),
                _ => t.b.clone(),
            };
            Context { s: t.s.clone(), b }
        })
        .collect()
}

/// Trains a model on `demos`; a random `holdout_fraction` of tuples is kept
/// out of training and used only for the reported held-out error.
pub fn train(demos: &DemoSet, scene: &Scene, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if demos.scene_hash != scene.hash() {
        return Err(Error::SceneMismatch { expected: scene.hash(), found: demos.scene_hash.clone() });
    }
    if demos.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty demo set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut all: Vec<&DemoTuple> = demos.tuples().collect();
    all.shuffle(&mut rng);
    let held = ((all.len() as f64) * config.holdout_fraction).round() as usize;
    let held = held.min(all.len() - 1);
    let (heldout, train_set) = all.split_at(held);
    let mut train_set = train_set.to_vec();

    let mut model = LatentModel::new(
        scene.hash(),
        scene.dof(),
        scene.num_goals(),
        config.latent_dim,
        config.hidden.clone(),
        config.a_max,
    )?;
    model.norm = Normalization::fit(train_set.iter().map(|t| (&t.s, &t.a)), scene.dof(), scene.dof());
    let mut params = model.encoder.init(&mut rng, false);
    params.extend(model.decoder.init(&mut rng, true));
    model.params = params;

    let grid = config.grid();
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        train_set.shuffle(&mut rng);
        let (mut recon, mut ent, mut n) = (0.0, 0.0, 0.0);
        for batch in train_set.chunks(config.batch_size) {
            let contexts = if config.lambda > 0.0 {
                sample_contexts(&mut rng, &train_set, config.context_samples, scene.num_goals())
            } else {
                Vec::new()
            };
            let (report, grad) = loss(&model, scene, batch, &contexts, &grid, config)?;
            if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut model.params, &grad);
            recon += report.recon;
            ent += report.entropy_term;
            n += 1.0;
        }
        let (recon, ent) = (recon / n, ent / n);
        history.push(LossReport { epoch, recon, entropy_term: ent, total: recon + config.lambda * ent });
    }
    let heldout_recon = if heldout.is_empty() { 0.0 } else { reconstruction_error(&model, heldout)? };
    Ok(TrainOutcome { model, history, heldout_recon, heldout_count: heldout.len() })
}
