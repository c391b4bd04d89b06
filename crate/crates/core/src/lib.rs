//! Episode augmentation for offline cooperative multi-agent RL with a
//! Q-total guided trajectory diffusion model.
//!
//! The pipeline turns episodes into a normalized `(B, F, T)` tensor
//! ([`episode`]), trains an x0-predicting temporal U-Net with a reward-to-go
//! hinge ([`diffusion`]), samples synthetic episodes ([`sampler`]) and
//! evaluates the result with value-factorized offline learners on a toy
//! focus-fire environment ([`marl`]).

pub mod config;
pub mod container;
pub mod diffusion;
pub mod episode;
pub mod error;
pub mod marl;
pub mod nn;
pub mod rad;
pub mod sampler;
pub mod seed;

pub use diffusion::{DiffusionModel, NoiseSchedule, TrainConfig};
pub use episode::{ChannelLayout, Episode, NormalizationStats, Source, TensorizedDataset};
pub use error::{Error, Result};
