//! Random amplitude scaling of observations (RAD-s / RAD-m baselines).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{Episode, Source};
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadMode {
    /// One scale per (agent, timestep), shared across observation dimensions.
    Single,
    /// Independent scale per observation dimension.
    Multi,
}

impl RadMode {
    pub fn source(self) -> Source {
        match self {
            RadMode::Single => Source::RadS,
            RadMode::Multi => Source::RadM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadConfig {
    /// Lower bound of the uniform scale.
    pub alpha: f64,
    /// Upper bound of the uniform scale.
    pub beta: f64,
    pub mode: RadMode,
    pub seed: u64,
}

impl Default for RadConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 1.2,
            mode: RadMode::Single,
            seed: 0,
        }
    }
}

impl RadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= self.beta && self.beta.is_finite()) {
            return Err(invalid(format!(
                "RAD bounds must satisfy 0 < alpha <= beta, got [{}, {}]",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Scale every observation by `z ~ U[alpha, beta]`; all other fields are copied.
pub fn rad_augment(episodes: &[Episode], config: &RadConfig) -> Result<Vec<Episode>> {
    config.validate()?;
    let (lo, hi) = (config.alpha, config.beta);
    Ok(episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut rng = seed::rng(seed::derive_stream(config.seed, i as u64));
            let mut out = ep.clone();
            for agents in &mut out.obs {
                for obs in agents.iter_mut() {
                    match config.mode {
                        RadMode::Single => {
                            let z = draw(&mut rng, lo, hi);
                            obs.iter_mut().for_each(|v| *v *= z);
                        }
                        RadMode::Multi => {
                            obs.iter_mut().for_each(|v| *v *= draw(&mut rng, lo, hi));
                        }
                    }
                }
            }
            out.with_source(config.mode.source())
        })
        .collect())
}

/// `scale` perturbed copies of the dataset appended to the originals.
pub fn rad_upsample(episodes: &[Episode], config: &RadConfig, scale: usize) -> Result<Vec<Episode>> {
    if scale == 0 {
        return Err(invalid("upsampling scale must be at least 1"));
    }
    let mut out: Vec<Episode> = episodes.iter().cloned().map(|e| e.with_source(Source::Real)).collect();
    for copy in 0..scale {
        let cfg = RadConfig {
            seed: seed::derive_stream(config.seed, copy as u64),
            ..config.clone()
        };
        out.extend(rad_augment(episodes, &cfg)?);
    }
    Ok(out)
}
