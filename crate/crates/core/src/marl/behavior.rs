//! Decentralized policies, rollouts and offline dataset generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{EnvConfig, FocusFireEnv, ATTACK_OFFSET};
use crate::episode::{compute_reward_to_go, Episode, Source};
use crate::error::{invalid, Result};
use crate::seed;

/// Maps the current per-agent observations to one action per agent.
pub trait Policy {
    fn act(&mut self, obs: &[Vec<f64>], rng: &mut seed::Rng) -> Result<Vec<usize>>;
}

/// Every agent attacks the living enemy with the lowest remaining HP
/// (lowest index on ties), with probability `epsilon` of a uniform action.
#[derive(Debug, Clone)]
pub struct FocusFirePolicy {
    pub num_enemies: usize,
    pub epsilon: f64,
}

impl FocusFirePolicy {
    pub fn new(config: &EnvConfig, epsilon: f64) -> Self {
        Self {
            num_enemies: config.num_enemies,
            epsilon,
        }
    }

    /// Greedy target read off an observation; `None` when no enemy is visible.
    pub fn target(&self, obs: &[f64]) -> Option<usize> {
        (0..self.num_enemies)
            .filter(|&j| obs[4 + 4 * j + 3] > 0.5)
            .min_by(|&a, &b| obs[4 + 4 * a + 2].total_cmp(&obs[4 + 4 * b + 2]).then(a.cmp(&b)))
    }
}

impl Policy for FocusFirePolicy {
    fn act(&mut self, obs: &[Vec<f64>], rng: &mut seed::Rng) -> Result<Vec<usize>> {
        let num_actions = ATTACK_OFFSET + self.num_enemies;
        Ok(obs
            .iter()
            .map(|o| {
                if rng.random::<f64>() < self.epsilon {
                    rng.random_range(0..num_actions)
                } else {
                    self.target(o).map_or(0, |j| ATTACK_OFFSET + j)
                }
            })
            .collect())
    }
}

/// Behavior quality of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorQuality {
    Medium,
    Poor,
}

impl BehaviorQuality {
    pub fn epsilon(self) -> f64 {
        match self {
            BehaviorQuality::Medium => 0.3,
            BehaviorQuality::Poor => 0.9,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorQuality::Medium => "medium",
            BehaviorQuality::Poor => "poor",
        }
    }
}

impl std::str::FromStr for BehaviorQuality {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medium" => Ok(BehaviorQuality::Medium),
            "poor" => Ok(BehaviorQuality::Poor),
            other => Err(invalid(format!("unknown policy quality {other:?}"))),
        }
    }
}

/// Play one episode. Recorded actions are the ones the environment applied.
pub fn rollout(config: &EnvConfig, policy: &mut impl Policy, rng: &mut seed::Rng) -> Result<Episode> {
    let mut env = FocusFireEnv::new(config.clone(), rng)?;
    let mut ep = Episode {
        num_agents: config.num_allies,
        obs: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        rtg: None,
        source: None,
    };
    while !env.is_done() {
        let obs = env.observe_all();
        let actions = policy.act(&obs, rng)?;
        let out = env.step(&actions)?;
        ep.obs.push(obs);
        ep.actions.push(out.actions);
        ep.rewards.push(out.reward);
    }
    Ok(ep)
}

/// `num_episodes` rollouts of the scripted behavior policy, each from its own stream.
pub fn generate_offline_dataset(
    config: &EnvConfig,
    quality: BehaviorQuality,
    num_episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<Episode>> {
    if num_episodes == 0 {
        return Err(invalid("num_episodes must be at least 1"));
    }
    config.validate()?;
    let mut policy = FocusFirePolicy::new(config, quality.epsilon());
    (0..num_episodes)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_stream(seed, i as u64));
            let ep = rollout(config, &mut policy, &mut rng)?;
            Ok(compute_reward_to_go(ep, gamma)?.with_source(Source::Real))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_return(eps: &[Episode]) -> f64 {
        eps.iter().map(Episode::total_return).sum::<f64>() / eps.len() as f64
    }

    #[test]
    fn target_picks_lowest_hp_alive() {
        let p = FocusFirePolicy { num_enemies: 3, epsilon: 0.0 };
        let mut o = vec![0.0; 16];
        for (j, hp) in [(0, 1.0), (1, 0.34), (2, 0.34)] {
            o[4 + 4 * j + 2] = hp;
            o[4 + 4 * j + 3] = 1.0;
        }
        assert_eq!(p.target(&o), Some(1));
        o[4 + 4 + 3] = 0.0;
        assert_eq!(p.target(&o), Some(2));
        assert_eq!(p.target(&[0.0; 16]), None);
    }

    #[test]
    fn datasets_are_valid_and_reproducible() {
        let cfg = EnvConfig::default();
        let eps = generate_offline_dataset(&cfg, BehaviorQuality::Poor, 20, 0.99, 4).unwrap();
        for ep in &eps {
            ep.validate(cfg.obs_dim(), cfg.num_actions()).unwrap();
            assert!(ep.len() <= cfg.episode_limit);
            assert!(ep.rewards.iter().all(|&r| r >= 0.0));
            assert!(ep.total_return() <= cfg.max_return() + 1e-9);
        }
        assert_eq!(eps, generate_offline_dataset(&cfg, BehaviorQuality::Poor, 20, 0.99, 4).unwrap());
        assert!(generate_offline_dataset(&cfg, BehaviorQuality::Poor, 0, 0.99, 4).is_err());
    }

    #[test]
    fn medium_beats_poor() {
        let cfg = EnvConfig::default();
        let medium = generate_offline_dataset(&cfg, BehaviorQuality::Medium, 200, 0.99, 1).unwrap();
        let poor = generate_offline_dataset(&cfg, BehaviorQuality::Poor, 200, 0.99, 1).unwrap();
        assert!(mean_return(&medium) > mean_return(&poor));
    }
}
