use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControllerConfig;
use crate::dataset::DemoConfig;
use crate::error::{Error, Result};
use crate::experiments::{SweepConfig, SweepKind};
use crate::humans::HumanKind;
use crate::latent::TrainConfig;
use crate::world::{make_two_cup_scene, Preference, Scene, SceneConfig};

/// Every knob of the pipeline, read from a TOML document.
///
/// The top-level `seed` drives all stages and replaces `train.seed`. The
/// plain model trains with no entropy term and the entropy model with
/// `entropy_lambda`; `train.lambda` must be left at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub entropy_lambda: f64,
    pub scene: SceneConfig,
    pub demos: DemoConfig,
    pub train: TrainConfig,
    pub controller: ControllerConfig,
    pub simulate: SimulateConfig,
    pub sweep: SweepConfig,
    /// Sweeps run by the `sweep` stage.
    pub sweeps: Vec<SweepKind>,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            entropy_lambda: 0.03,
            scene: SceneConfig::default(),
            demos: DemoConfig::default(),
            train: TrainConfig::default(),
            controller: ControllerConfig::default(),
            simulate: SimulateConfig::default(),
            sweep: SweepConfig::default(),
            sweeps: SweepKind::ALL.to_vec(),
            paths: Paths::default(),
        }
    }
}

/// A single scripted rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub human: HumanKind,
    pub goal: usize,
    pub theta: f64,
    pub horizon: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { human: HumanKind::Fixed { beta: 1000.0 }, goal: 0, theta: 0.5, horizon: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub demos: String,
    pub model: String,
    pub entropy_model: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("out"),
            demos: "demos.jsonl".into(),
            model: "model.json".into(),
            entropy_model: "model_entropy.json".into(),
        }
    }
}

impl Paths {
    pub fn demos_path(&self) -> PathBuf {
        self.out_dir.join(&self.demos)
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir.join(&self.model)
    }

    pub fn entropy_model_path(&self) -> PathBuf {
        self.out_dir.join(&self.entropy_model)
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.demos.validate()?;
        self.train.validate()?;
        if self.train.lambda != 0.0 {
            return Err(Error::Config("set entropy_lambda instead of train.lambda".into()));
        }
        if !(self.entropy_lambda.is_finite() && self.entropy_lambda > 0.0) {
            return Err(Error::Config(format!("entropy_lambda must be positive, got {}", self.entropy_lambda)));
        }
        self.controller.validate()?;
        self.sweep.validate()?;
        self.simulate.human.validate()?;
        Preference::new(self.simulate.theta)?;
        if self.simulate.horizon == 0 {
            return Err(Error::Config("simulate.horizon must be positive".into()));
        }
        if self.scene.cups.len() <= self.simulate.goal {
            return Err(Error::Config(format!(
                "simulate.goal {} out of {} cups",
                self.simulate.goal,
                self.scene.cups.len()
            )));
        }
        for (name, file) in
            [("demos", &self.paths.demos), ("model", &self.paths.model), ("entropy_model", &self.paths.entropy_model)]
        {
            if file.is_empty() {
                return Err(Error::Config(format!("paths.{name} is empty")));
            }
        }
        Ok(())
    }

    pub fn build_scene(&self) -> Result<Scene> {
        make_two_cup_scene(&self.scene)
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Training settings for the plain or the entropy-regularized model.
    pub fn train_config(&self, entropy: bool) -> TrainConfig {
        TrainConfig { lambda: if entropy { self.entropy_lambda } else { 0.0 }, seed: self.seed, ..self.train.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sed = 3"), Err(Error::Parse { .. })));
        let err = ExperimentConfig::from_toml("[train]\nepochs = 5\nlamda = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("[controller]\nalpha = 2.0"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("[simulate]\ntheta = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[simulate.human]\nkind = \"learner\"\nslope = -1.0").is_err());
    }

    #[test]
    fn plain_model_ignores_lambda() {
        let c = ExperimentConfig::from_toml("seed = 9\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(c.train_config(false).lambda, 0.0);
        assert_eq!(c.train_config(true).lambda, 0.03);
        assert_eq!(c.train_config(true).seed, 9);
        assert_eq!(c.train_config(true).epochs, 5);
        assert!(ExperimentConfig::from_toml("[train]\nlambda = 0.1\n").is_err());
    }
}
