//! Noise schedule, forward noising, the x0-predicting denoiser and its
//! Q-total guided training.

mod denoiser;
pub mod loss;
mod schedule;
mod train;

pub use denoiser::{step_embedding, Denoiser, DenoiserConfig, TemporalUnet};
pub use loss::{guided_loss_tensor, guided_objective, q_channel_mean, LossTerms, QMap, QSpace};
pub use schedule::{scaled_beta_range, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
pub use train::{
    guided_loss, train, EpochLog, Minibatch, TrainConfig, TrainingLog, DEFAULT_LAMBDA, LAMBDA_GRID,
};

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::episode::{ChannelLayout, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::ParamSpec;

/// A trained denoiser with everything needed to sample and decode without the
/// original dataset.
pub struct DiffusionModel {
    pub net: TemporalUnet,
    pub schedule: NoiseSchedule,
    pub layout: ChannelLayout,
    pub stats: NormalizationStats,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    layout: ChannelLayout,
    stats: NormalizationStats,
    schedule: NoiseSchedule,
    params: Vec<ParamSpec>,
}

impl DiffusionModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            layout: self.layout.clone(),
            stats: self.stats.clone(),
            schedule: self.schedule.clone(),
            params: self.net.params().specs(),
        };
        self.net.params().write_checkpoint(
            path.as_ref(),
            container::DIFFUSION_CHECKPOINT,
            &serde_json::to_vec(&header)?,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, _, payload) = container::read(path.as_ref(), container::DIFFUSION_CHECKPOINT)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut net = TemporalUnet::new(header.layout.num_features(), header.config.denoiser.clone(), 0)?;
        net.params_mut()
            .load_flat(&header.params, &container::bytes_f32(&payload)?)?;
        if header.schedule.steps() != header.config.diffusion_steps {
            return Err(Error::Checkpoint("schedule length disagrees with config".into()));
        }
        Ok(Self {
            net,
            schedule: header.schedule,
            layout: header.layout,
            stats: header.stats,
            config: header.config,
        })
    }
}

impl Denoiser for DiffusionModel {
    fn denoise(&self, noisy: &Tensor, steps: &[usize]) -> Result<Tensor> {
        self.net.forward(noisy, steps)
    }
}
