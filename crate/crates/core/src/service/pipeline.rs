//! The staged pipeline: demonstrations, training, single rollouts and sweeps.
//! Each stage writes its artifacts into `paths.out_dir` together with a
//! `<stage>.manifest.json` recording what produced them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::control::Session;
use crate::dataset::{generate_demos, load_demos, save_demos};
use crate::error::{Error, Result};
use crate::experiments::{compute_metrics, run_rollout, run_sweep, MetricParams, MetricReport, Models};
use crate::humans::{latent_candidates, retarget_candidates, HumanModel};
use crate::latent::{train, LatentModel};
use crate::world::{Preference, Scene};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub artifacts: Vec<String>,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub scene_hash: String,
}

fn write_manifest(config: &ExperimentConfig, scene: &Scene, stage: &str, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let manifest = Manifest {
        stage: stage.to_string(),
        artifacts: artifacts
            .iter()
            .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
            .collect(),
        config_sha256: config.sha256()?,
        seed: config.seed,
        version: VERSION.to_string(),
        scene_hash: scene.hash(),
    };
    let path = config.paths.out_dir.join(format!("{stage}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Pipeline(format!("{} not found; run {stage} first", path.display())))
    }
}

fn staged(e: Error) -> Error {
    match e {
        Error::SceneMismatch { expected, found } => Error::Pipeline(format!(
            "artifact was built for scene {found} but the configuration describes scene {expected}"
        )),
        other => other,
    }
}

pub fn gen_demos(config: &ExperimentConfig) -> Result<PathBuf> {
    let scene = config.build_scene()?;
    let demos = generate_demos(&scene, &config.demos, config.seed)?;
    fs::create_dir_all(&config.paths.out_dir)?;
    let path = config.paths.demos_path();
    save_demos(&demos, &path)?;
    write_manifest(config, &scene, "gen-demos", std::slice::from_ref(&path))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub entropy_model: PathBuf,
    pub heldout_recon: f64,
    pub entropy_heldout_recon: f64,
}

/// Trains the plain and the entropy-regularized decoder. Nothing is written
/// unless both succeed.
pub fn train_models(config: &ExperimentConfig) -> Result<TrainSummary> {
    let scene = config.build_scene()?;
    let demos_path = config.paths.demos_path();
    require(&demos_path, "gen-demos")?;
    let demos = load_demos(&demos_path)?;
    if demos.scene_hash != scene.hash() {
        return Err(staged(Error::SceneMismatch { expected: scene.hash(), found: demos.scene_hash }));
    }
    let plain = train(&demos, &scene, &config.train_config(false))?;
    let entropy = train(&demos, &scene, &config.train_config(true))?;
    let summary = TrainSummary {
        model: config.paths.model_path(),
        entropy_model: config.paths.entropy_model_path(),
        heldout_recon: plain.heldout_recon,
        entropy_heldout_recon: entropy.heldout_recon,
    };
    plain.model.save(&summary.model)?;
    entropy.model.save(&summary.entropy_model)?;
    write_manifest(config, &scene, "train", &[summary.model.clone(), summary.entropy_model.clone()])?;
    Ok(summary)
}

/// Loads both trained decoders, checking they match the configured scene.
pub fn load_models(config: &ExperimentConfig, scene: &Scene) -> Result<Models> {
    let load = |path: PathBuf| -> Result<Arc<LatentModel>> {
        require(&path, "train")?;
        Ok(Arc::new(LatentModel::load(&path, &scene.hash()).map_err(staged)?))
    };
    Ok(Models { plain: load(config.paths.model_path())?, entropy: load(config.paths.entropy_model_path())? })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateOutcome {
    pub rollout: PathBuf,
    pub metrics: MetricReport,
}

/// One rollout of the configured operator; writes `rollout.csv` and
/// `metrics.json`.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulateOutcome> {
    let scene = Arc::new(config.build_scene()?);
    let models = load_models(config, &scene)?;
    let model = if config.controller.entropy_model { models.entropy } else { models.plain };
    let sim = &config.simulate;
    let mut session = Session::new(scene.clone(), Some(model.clone()), config.controller.clone())?;
    session.set_true_goal(Some(sim.goal))?;
    let mut human = HumanModel::new(&scene, sim.human.clone(), sim.goal, Preference::new(sim.theta)?, config.seed)?;
    human.high_beta = config.sweep.high_beta;
    human.view = config.sweep.view;
    human.space = config.sweep.space;
    let candidates = if config.controller.mode.uses_latent() {
        latent_candidates(model.latent_dim, config.sweep.latent_points)
    } else {
        retarget_candidates(config.sweep.retarget_points)
    };
    run_rollout(&mut session, &mut human, &candidates, sim.horizon)?;
    let params = MetricParams { tol: config.sweep.tol, manipulation_threshold: config.sweep.manipulation_threshold };
    let metrics =
        compute_metrics(&session.log, &scene.arm, &human.s_star, sim.goal, scene.inter_goal_distance, &params)?;
    fs::create_dir_all(&config.paths.out_dir)?;
    let rollout = config.paths.out_dir.join("rollout.csv");
    fs::write(&rollout, session.log.to_csv())?;
    let metrics_path = config.paths.out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Io(e.into()))?;
    fs::write(&metrics_path, text + "\n")?;
    write_manifest(config, &scene, "simulate", &[rollout.clone(), metrics_path])?;
    Ok(SimulateOutcome { rollout, metrics })
}

/// Runs every configured sweep; per kind writes the trial table, a summary
/// with means and standard errors, and mean confidence traces.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let scene = Arc::new(config.build_scene()?);
    let models = load_models(config, &scene)?;
    fs::create_dir_all(&config.paths.out_dir)?;
    let mut written = Vec::new();
    for &kind in &config.sweeps {
        let results = run_sweep(&scene, &models, &config.controller, &config.sweep, kind, config.seed)?;
        for (suffix, body) in
            [("", results.to_csv()), ("_summary", results.summary_csv()), ("_traces", results.traces_csv())]
        {
            let path = config.paths.out_dir.join(format!("sweep_{}{suffix}.csv", kind.as_str()));
            fs::write(&path, body)?;
            written.push(path);
        }
    }
    write_manifest(config, &scene, "sweep", &written)?;
    Ok(written)
}
