use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a single feature row of the trajectory matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum RowRole {
    Obs { agent: usize, dim: usize },
    ActionOneHot { agent: usize, action: usize },
    Reward,
    QTot,
    Done,
}

/// Row assignment of the `(F, T)` trajectory matrix.
///
/// Each agent contributes its observation rows followed by its one-hot action
/// rows; the last three rows are reward, reward-to-go and the terminal flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub num_agents: usize,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub t_max: usize,
}

impl ChannelLayout {
    pub fn new(num_agents: usize, obs_dim: usize, num_actions: usize, t_max: usize) -> Result<Self> {
        if num_agents == 0 || num_actions == 0 || t_max == 0 {
            return Err(Error::Layout(format!(
                "degenerate layout: agents {num_agents}, actions {num_actions}, t_max {t_max}"
            )));
        }
        Ok(Self {
            num_agents,
            obs_dim,
            num_actions,
            t_max,
        })
    }

    fn agent_block(&self) -> usize {
        self.obs_dim + self.num_actions
    }

    /// Feature count `F = N (d_obs + |A|) + 3`.
    pub fn num_features(&self) -> usize {
        self.num_agents * self.agent_block() + 3
    }

    pub fn obs_row(&self, agent: usize, dim: usize) -> usize {
        agent * self.agent_block() + dim
    }

    pub fn action_row(&self, agent: usize, action: usize) -> usize {
        agent * self.agent_block() + self.obs_dim + action
    }

    pub fn reward_row(&self) -> usize {
        self.num_features() - 3
    }

    pub fn q_row(&self) -> usize {
        self.num_features() - 2
    }

    pub fn done_row(&self) -> usize {
        self.num_features() - 1
    }

    pub fn role(&self, row: usize) -> Option<RowRole> {
        let f = self.num_features();
        if row >= f {
            return None;
        }
        Some(match f - row {
            3 => RowRole::Reward,
            2 => RowRole::QTot,
            1 => RowRole::Done,
            _ => {
                let agent = row / self.agent_block();
                let within = row % self.agent_block();
                if within < self.obs_dim {
                    RowRole::Obs { agent, dim: within }
                } else {
                    RowRole::ActionOneHot {
                        agent,
                        action: within - self.obs_dim,
                    }
                }
            }
        })
    }

    /// Roles of all rows, in row order.
    pub fn row_map(&self) -> Vec<RowRole> {
        (0..self.num_features()).filter_map(|r| self.role(r)).collect()
    }

    /// Rows of one agent's one-hot action block.
    pub fn agent_action_rows(&self, agent: usize) -> std::ops::Range<usize> {
        let start = self.action_row(agent, 0);
        start..start + self.num_actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_count() {
        let l = ChannelLayout::new(3, 4, 5, 10).unwrap();
        assert_eq!(l.num_features(), 30);
        assert_eq!(l.row_map().len(), 30);
    }

    #[test]
    fn row_order() {
        let l = ChannelLayout::new(2, 2, 3, 4).unwrap();
        let map = l.row_map();
        assert_eq!(map[0], RowRole::Obs { agent: 0, dim: 0 });
        assert_eq!(map[2], RowRole::ActionOneHot { agent: 0, action: 0 });
        assert_eq!(map[5], RowRole::Obs { agent: 1, dim: 0 });
        assert_eq!(map[9], RowRole::ActionOneHot { agent: 1, action: 2 });
        assert_eq!(&map[10..], &[RowRole::Reward, RowRole::QTot, RowRole::Done]);
        for (row, role) in map.iter().enumerate() {
            match *role {
                RowRole::Obs { agent, dim } => assert_eq!(l.obs_row(agent, dim), row),
                RowRole::ActionOneHot { agent, action } => assert_eq!(l.action_row(agent, action), row),
                _ => {}
            }
        }
        assert_eq!(l.role(13), None);
    }
}
