//! Experiment configuration, one TOML file per experiment.
//!
//! Every key has a default; unknown keys are rejected by name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    DenoiserConfig, QSpace, TrainConfig, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_LAMBDA,
    DEFAULT_STEPS, LAMBDA_GRID,
};
use crate::error::{Error, Result};
use crate::marl::{BehaviorQuality, EnvConfig, LearnerConfig, Regularizer};
use crate::rad::{RadConfig, RadMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub policy: BehaviorQuality,
    pub num_episodes: usize,
    /// Share of the full dataset kept as the low-data original set.
    pub fraction: f64,
    pub gamma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            policy: BehaviorQuality::Poor,
            num_episodes: 1000,
            fraction: 0.03,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub q_space: QSpace,
    pub denoiser: DenoiserConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: DEFAULT_LAMBDA,
            lambda_grid: LAMBDA_GRID.to_vec(),
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            diffusion_steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            q_space: QSpace::Normalized,
            denoiser: DenoiserConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Synthetic episodes per real episode.
    pub scale: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { scale: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RadSection {
    fn default() -> Self {
        let r = RadConfig::default();
        Self { alpha: r.alpha, beta: r.beta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cql,
    Bcq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub algorithm: Algorithm,
    pub cql_weight: f64,
    pub bcq_threshold: f64,
    pub iterations: usize,
    pub hidden: usize,
    pub mixer_embed: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_period: usize,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let l = LearnerConfig::default();
        Self {
            algorithm: Algorithm::Cql,
            cql_weight: 1.0,
            bcq_threshold: 0.3,
            iterations: 3000,
            hidden: l.hidden,
            mixer_embed: l.mixer_embed,
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            target_period: l.target_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: String,
    pub seed: u64,
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub diffusion: DiffusionConfig,
    pub sampler: SamplerConfig,
    pub rad: RadSection,
    pub learner: LearnerSection,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: "focus_fire_3v3".into(),
            seed: 0,
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            diffusion: DiffusionConfig::default(),
            sampler: SamplerConfig::default(),
            rad: RadSection::default(),
            learner: LearnerSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn key_error(key: &str, detail: impl std::fmt::Display) -> Error {
    Error::Schema(format!("{key}: {detail}"))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.as_ref().display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check value ranges; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| key_error("env", e))?;
        let d = &self.dataset;
        if d.num_episodes == 0 {
            return Err(key_error("dataset.num_episodes", "must be at least 1"));
        }
        if !(d.fraction > 0.0 && d.fraction <= 1.0) {
            return Err(key_error("dataset.fraction", "must lie in (0, 1]"));
        }
        if !(d.gamma > 0.0 && d.gamma <= 1.0) {
            return Err(key_error("dataset.gamma", "must lie in (0, 1]"));
        }
        let f = &self.diffusion;
        if !(f.lambda >= 0.0) {
            return Err(key_error("diffusion.lambda", "must be non-negative"));
        }
        if f.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(key_error("diffusion.lambda_grid", "entries must be non-negative"));
        }
        self.train_config(0)
            .validate()
            .and_then(|_| self.train_config(0).schedule().map(|_| ()))
            .map_err(|e| key_error("diffusion", e))?;
        if self.sampler.scale == 0 {
            return Err(key_error("sampler.scale", "must be at least 1"));
        }
        self.rad_config(RadMode::Single, 0)
            .validate()
            .map_err(|e| key_error("rad", e))?;
        if self.learner.iterations == 0 {
            return Err(key_error("learner.iterations", "must be at least 1"));
        }
        self.learner_config().validate().map_err(|e| key_error("learner", e))?;
        if self.eval.episodes == 0 {
            return Err(key_error("eval.episodes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let f = &self.diffusion;
        TrainConfig {
            lambda: f.lambda,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            epochs: f.epochs,
            gamma: self.dataset.gamma,
            diffusion_steps: f.diffusion_steps,
            beta_start: f.beta_start,
            beta_end: f.beta_end,
            q_space: f.q_space,
            seed,
            denoiser: f.denoiser.clone(),
        }
    }

    pub fn rad_config(&self, mode: RadMode, seed: u64) -> RadConfig {
        RadConfig {
            alpha: self.rad.alpha,
            beta: self.rad.beta,
            mode,
            seed,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let l = &self.learner;
        LearnerConfig {
            regularizer: match l.algorithm {
                Algorithm::Cql => Regularizer::Cql { weight: l.cql_weight },
                Algorithm::Bcq => Regularizer::Bcq { threshold: l.bcq_threshold },
            },
            hidden: l.hidden,
            mixer_embed: l.mixer_embed,
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            gamma: self.dataset.gamma,
            target_period: l.target_period,
        }
    }
}
