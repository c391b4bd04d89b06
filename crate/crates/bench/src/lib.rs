//! Shared fixtures for the benchmarks.

pub use eaq::diffusion::{DenoiserConfig, TemporalUnet};
pub use eaq::marl::{generate_offline_dataset, BehaviorQuality, EnvConfig, FocusFireEnv};
pub use eaq::episode::tensorize;
pub use eaq::{seed, ChannelLayout, Episode, NoiseSchedule};

/// Poor-quality episodes on the default environment.
pub fn episodes(count: usize, seed: u64) -> Vec<Episode> {
    generate_offline_dataset(&EnvConfig::default(), BehaviorQuality::Poor, count, 0.99, seed)
        .expect("default environment is valid")
}

pub fn layout() -> ChannelLayout {
    EnvConfig::default().layout().expect("default environment is valid")
}
