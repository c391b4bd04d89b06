//! Multi-agent episode data: the raw record, reward-to-go targets, file I/O and
//! the mapping to and from the `(B, F, T)` training tensor.

mod io;
mod layout;
mod tensor;

pub use io::{read_episodes, write_episodes, DatasetMeta, EpisodeFile};
pub use layout::{ChannelLayout, RowRole};
pub use tensor::{
    decode_matrix, detensorize, tensorize, ChannelKind, NormalizationStats, TensorizedDataset,
    DONE_THRESHOLD,
};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// Where an episode in an augmented dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
    RadS,
    RadM,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
            Source::RadS => "rad_s",
            Source::RadM => "rad_m",
        }
    }
}

/// One cooperative episode. The final step is the terminal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub num_agents: usize,
    /// `obs[t][agent][dim]`
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `actions[t][agent]`
    pub actions: Vec<Vec<usize>>,
    /// Global reward per step.
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Observation width, taken from the first observation vector.
    pub fn obs_dim(&self) -> usize {
        self.obs
            .first()
            .and_then(|agents| agents.first())
            .map_or(0, Vec::len)
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = Some(source);
        self
    }

    /// Check the structural invariants against an observation width and action count.
    pub fn validate(&self, obs_dim: usize, num_actions: usize) -> Result<()> {
        let len = self.len();
        if len == 0 {
            return Err(invalid("episode has no steps"));
        }
        if self.obs.len() != len || self.actions.len() != len {
            return Err(invalid(format!(
                "episode field lengths disagree: obs {}, actions {}, rewards {len}",
                self.obs.len(),
                self.actions.len()
            )));
        }
        if let Some(rtg) = &self.rtg {
            if rtg.len() != len {
                return Err(invalid(format!("rtg has {} entries, expected {len}", rtg.len())));
            }
        }
        for (t, (obs_t, act_t)) in self.obs.iter().zip(&self.actions).enumerate() {
            if obs_t.len() != self.num_agents || act_t.len() != self.num_agents {
                return Err(invalid(format!("step {t}: expected {} agents", self.num_agents)));
            }
            if let Some(o) = obs_t.iter().find(|o| o.len() != obs_dim) {
                return Err(invalid(format!(
                    "step {t}: observation width {} != {obs_dim}",
                    o.len()
                )));
            }
            if let Some(&a) = act_t.iter().find(|&&a| a >= num_actions) {
                return Err(invalid(format!(
                    "step {t}: action id {a} outside [0, {num_actions})"
                )));
            }
        }
        Ok(())
    }
}

/// Fill `rtg` with discounted suffix sums of the rewards.
pub fn compute_reward_to_go(mut episode: Episode, gamma: f64) -> Result<Episode> {
    if episode.rewards.is_empty() {
        return Err(invalid("cannot compute reward-to-go of an empty episode"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("gamma {gamma} outside (0, 1]")));
    }
    let mut rtg = vec![0.0; episode.rewards.len()];
    let mut acc = 0.0;
    for (slot, r) in rtg.iter_mut().zip(&episode.rewards).rev() {
        acc = r + gamma * acc;
        *slot = acc;
    }
    episode.rtg = Some(rtg);
    Ok(episode)
}

/// Sample `ceil(fraction * B)` episodes uniformly without replacement.
pub fn downsample_dataset(episodes: &[Episode], fraction: f64, seed: u64) -> Result<Vec<Episode>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    // Guard against 0.03 * 100 = 3.0000000000000004 rounding up to 4.
    let want = ((fraction * episodes.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let want = want.min(episodes.len());
    let mut rng = seed::rng(seed);
    Ok(index::sample(&mut rng, episodes.len(), want)
        .into_iter()
        .map(|i| episodes[i].clone())
        .collect())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use rand::Rng;

    /// Random valid episode with rtg filled, for round-trip tests.
    pub fn random_episode(
        rng: &mut impl Rng,
        num_agents: usize,
        obs_dim: usize,
        num_actions: usize,
        max_len: usize,
    ) -> Episode {
        let len = rng.random_range(1..=max_len);
        let obs = (0..len)
            .map(|_| {
                (0..num_agents)
                    .map(|_| (0..obs_dim).map(|_| rng.random_range(-2.0..3.0)).collect())
                    .collect()
            })
            .collect();
        let actions = (0..len)
            .map(|_| (0..num_agents).map(|_| rng.random_range(0..num_actions)).collect())
            .collect();
        let rewards = (0..len).map(|_| rng.random_range(0.0..2.0)).collect();
        let ep = Episode {
            num_agents,
            obs,
            actions,
            rewards,
            rtg: None,
            source: None,
        };
        compute_reward_to_go(ep, 0.99).unwrap()
    }
}
