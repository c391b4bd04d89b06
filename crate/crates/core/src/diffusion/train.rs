use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::debug;
use ndarray::{Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{guided_loss_tensor, LossTerms, QMap, QSpace};
use super::schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use super::{DenoiserConfig, DiffusionModel, TemporalUnet};
use crate::episode::TensorizedDataset;
use crate::error::{invalid, Error, Result};
use crate::nn::tensor_from_f64;
use crate::seed;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const LAMBDA_GRID: [f64; 3] = [0.5, 0.1, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the Q-total hinge.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// One epoch is `ceil(B / batch_size)` optimizer steps.
    pub epochs: usize,
    pub gamma: f64,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub q_space: QSpace,
    pub seed: u64,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            batch_size: 32,
            learning_rate: 2e-4,
            epochs: 100,
            gamma: 0.99,
            diffusion_steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            q_space: QSpace::Normalized,
            seed: 0,
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        Ok(())
    }

    /// Shorter schedule with the beta range rescaled to match.
    pub fn with_steps(mut self, steps: usize) -> Self {
        let (lo, hi) = super::schedule::scaled_beta_range(steps);
        self.diffusion_steps = steps;
        self.beta_start = lo;
        self.beta_end = hi;
        self
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub hinge: f64,
    pub q_max_batch: f64,
    pub q_gen_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Total loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "epoch,mse,hinge,q_max_batch,q_gen_mean")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{}", e.epoch, e.mse, e.hinge, e.q_max_batch, e.q_gen_mean)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A minibatch of clean trajectories in normalized space.
pub struct Minibatch {
    pub clean: Array3<f64>,
    pub lengths: Vec<usize>,
}

impl Minibatch {
    pub fn gather(ds: &TensorizedDataset, indices: &[usize]) -> Self {
        Self {
            clean: ds.data.select(Axis(0), indices),
            lengths: indices.iter().map(|&i| ds.episode_lengths[i]).collect(),
        }
    }
}

/// One draw of the guided objective on a minibatch.
///
/// Samples `k ~ Uniform{1..K}` and `ε ~ N(0, I)` per trajectory, noises the
/// batch in closed form, predicts `τ̂_0` and scores it.
pub fn guided_loss(
    batch: &Minibatch,
    model: &TemporalUnet,
    schedule: &NoiseSchedule,
    lambda: f64,
    qmap: QMap,
    layout: &crate::episode::ChannelLayout,
    rng: &mut impl Rng,
) -> Result<(Tensor, LossTerms)> {
    let (b, f, t) = batch.clean.dim();
    if b == 0 {
        return Err(invalid("empty minibatch"));
    }
    let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let mut noisy = Vec::with_capacity(b * f * t);
    for (sample, &k) in batch.clean.outer_iter().zip(&steps) {
        let eps: Vec<f64> = (0..f * t).map(|_| rng.sample(StandardNormal)).collect();
        let flat: Vec<f64> = sample.iter().copied().collect();
        noisy.extend(schedule.forward_noise(&flat, k, &eps)?);
    }
    let device = model.params().device();
    let noisy = tensor_from_f64(&noisy, &[b, f, t], device)?;
    let clean: Vec<f64> = batch.clean.iter().copied().collect();
    let clean = tensor_from_f64(&clean, &[b, f, t], device)?;
    let pred = model.forward(&noisy, &steps)?;
    guided_loss_tensor(&clean, &pred, &batch.lengths, layout, lambda, qmap)
}

/// Fit a denoiser to the dataset by minimizing the guided loss.
pub fn train(dataset: &TensorizedDataset, config: &TrainConfig) -> Result<(DiffusionModel, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let schedule = config.schedule()?;
    let layout = &dataset.layout;
    let net = TemporalUnet::new(
        layout.num_features(),
        config.denoiser.clone(),
        seed::derive_seed(config.seed, "denoiser-init"),
    )?;
    let mut opt = AdamW::new(
        net.params().vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let qmap = QMap::new(config.q_space, layout, &dataset.stats);
    let mut rng = seed::rng(seed::derive_seed(config.seed, "denoiser-train"));
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size).max(1);
    let mut log = TrainingLog::default();

    let mut global_step = 0;
    for epoch in 0..config.epochs {
        let mut acc = LossTerms::default();
        for _ in 0..steps_per_epoch {
            let indices: Vec<usize> = (0..config.batch_size)
                .map(|_| rng.random_range(0..dataset.len()))
                .collect();
            let batch = Minibatch::gather(dataset, &indices);
            let (loss, terms) = guided_loss(&batch, &net, &schedule, config.lambda, qmap, layout, &mut rng)?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged {
                    step: global_step,
                    detail: format!(
                        "loss {} (mse {}, hinge {}) at epoch {epoch}",
                        terms.total, terms.mse, terms.hinge
                    ),
                });
            }
            opt.backward_step(&loss)?;
            log.step_losses.push(terms.total);
            acc.mse += terms.mse;
            acc.hinge += terms.hinge;
            acc.q_max_batch += terms.q_max_batch;
            acc.q_gen_mean += terms.q_gen_mean;
            global_step += 1;
        }
        let n = steps_per_epoch as f64;
        let entry = EpochLog {
            epoch,
            mse: acc.mse / n,
            hinge: acc.hinge / n,
            q_max_batch: acc.q_max_batch / n,
            q_gen_mean: acc.q_gen_mean / n,
        };
        debug!("epoch {epoch}: mse {:.5} hinge {:.5}", entry.mse, entry.hinge);
        log.epochs.push(entry);
    }

    let model = DiffusionModel {
        net,
        schedule,
        layout: layout.clone(),
        stats: dataset.stats.clone(),
        config: config.clone(),
    };
    Ok((model, log))
}
