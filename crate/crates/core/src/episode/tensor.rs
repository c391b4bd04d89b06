use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ChannelLayout, Episode, RowRole};
use crate::container;
use crate::error::{invalid, Error, Result};

/// Raw done values at or above this decode as a terminal step.
pub const DONE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Continuous,
    Binary,
}

/// Per-row affine map between raw values and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub kind: Vec<ChannelKind>,
}

impl NormalizationStats {
    /// Fit min/max over the padded raw tensor `(B, F, T)`; binary rows are pinned to `[0, 1]`.
    fn fit(layout: &ChannelLayout, raw: &Array3<f64>) -> Self {
        let f = layout.num_features();
        let mut min = vec![0.0; f];
        let mut max = vec![0.0; f];
        let mut kind = vec![ChannelKind::Continuous; f];
        for (row, role) in layout.row_map().into_iter().enumerate() {
            if matches!(role, RowRole::ActionOneHot { .. } | RowRole::Done) {
                kind[row] = ChannelKind::Binary;
                min[row] = 0.0;
                max[row] = 1.0;
                continue;
            }
            let lane = raw.index_axis(Axis(1), row);
            let (lo, hi) = lane
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo.is_finite() {
                min[row] = lo;
                max[row] = hi;
            }
        }
        Self { min, max, kind }
    }

    pub fn normalize(&self, row: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[row], self.max[row]);
        if hi > lo {
            2.0 * (x - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, row: usize, y: f64) -> f64 {
        let (lo, hi) = (self.min[row], self.max[row]);
        if hi > lo {
            (y + 1.0) * 0.5 * (hi - lo) + lo
        } else {
            lo
        }
    }
}

/// The normalized `(B, F, T_max)` training tensor plus what is needed to decode it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorizedDataset {
    #[serde(skip)]
    pub data: Array3<f64>,
    pub layout: ChannelLayout,
    pub stats: NormalizationStats,
    pub episode_lengths: Vec<usize>,
}

impl TensorizedDataset {
    pub fn len(&self) -> usize {
        self.episode_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episode_lengths.is_empty()
    }

    pub fn sample(&self, index: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), index)
    }

    /// Denormalized copy of one sample.
    pub fn raw_sample(&self, index: usize) -> Array2<f64> {
        let mut out = self.sample(index).to_owned();
        for (row, mut lane) in out.outer_iter_mut().enumerate() {
            lane.mapv_inplace(|v| self.stats.denormalize(row, v));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_vec(self)?;
        let shape = self.data.shape().to_vec();
        let payload: Vec<f64> = self.data.iter().copied().collect();
        container::write(
            path.as_ref(),
            container::TENSOR_CACHE,
            &header,
            &shape,
            &container::f64_bytes(&payload),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, shape, bytes) = container::read(path.as_ref(), container::TENSOR_CACHE)?;
        let mut ds: TensorizedDataset = serde_json::from_slice(&header)?;
        let values = container::bytes_f64(&bytes)?;
        let [b, f, t] = shape[..] else {
            return Err(Error::Checkpoint(format!("tensor cache shape {shape:?} is not rank 3")));
        };
        ds.data = Array3::from_shape_vec((b, f, t), values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if b != ds.episode_lengths.len() || f != ds.layout.num_features() || t != ds.layout.t_max {
            return Err(Error::Checkpoint("tensor cache header disagrees with payload".into()));
        }
        Ok(ds)
    }
}

/// Raw-space `(F, T_max)` matrix of one episode, zero padded past its length.
fn raw_matrix(ep: &Episode, layout: &ChannelLayout) -> Result<Array2<f64>> {
    if ep.num_agents != layout.num_agents {
        return Err(Error::Layout(format!(
            "episode has {} agents, layout expects {}",
            ep.num_agents, layout.num_agents
        )));
    }
    if ep.len() > layout.t_max {
        return Err(Error::Layout(format!(
            "episode length {} exceeds T_max {}",
            ep.len(),
            layout.t_max
        )));
    }
    if !ep.is_empty() && ep.obs_dim() != layout.obs_dim {
        return Err(Error::Layout(format!(
            "observation width {} != layout {}",
            ep.obs_dim(),
            layout.obs_dim
        )));
    }
    ep.validate(layout.obs_dim, layout.num_actions)
        .map_err(|e| Error::Layout(e.to_string()))?;
    let rtg = ep
        .rtg
        .as_ref()
        .ok_or_else(|| invalid("episode is missing reward-to-go; compute it before tensorizing"))?;

    let mut m = Array2::zeros((layout.num_features(), layout.t_max));
    for t in 0..ep.len() {
        for agent in 0..layout.num_agents {
            for (dim, &v) in ep.obs[t][agent].iter().enumerate() {
                m[[layout.obs_row(agent, dim), t]] = v;
            }
            m[[layout.action_row(agent, ep.actions[t][agent]), t]] = 1.0;
        }
        m[[layout.reward_row(), t]] = ep.rewards[t];
        m[[layout.q_row(), t]] = rtg[t];
    }
    m[[layout.done_row(), ep.len() - 1]] = 1.0;
    Ok(m)
}

/// Build the normalized training tensor from episodes with reward-to-go filled.
pub fn tensorize(episodes: &[Episode], layout: &ChannelLayout) -> Result<TensorizedDataset> {
    let (f, t) = (layout.num_features(), layout.t_max);
    let mut data = Array3::zeros((episodes.len(), f, t));
    for (b, ep) in episodes.iter().enumerate() {
        data.slice_mut(s![b, .., ..]).assign(&raw_matrix(ep, layout)?);
    }
    let stats = NormalizationStats::fit(layout, &data);
    for mut sample in data.outer_iter_mut() {
        for (row, mut lane) in sample.outer_iter_mut().enumerate() {
            lane.mapv_inplace(|v| stats.normalize(row, v));
        }
    }
    Ok(TensorizedDataset {
        data,
        layout: layout.clone(),
        stats,
        episode_lengths: episodes.iter().map(Episode::len).collect(),
    })
}

/// Decode one normalized `(F, T_max)` matrix.
///
/// The episode ends at the first column whose raw done value reaches 0.5, or
/// spans all of `T_max` when none does. Actions are the argmax of each agent's
/// one-hot block; `rtg` carries the decoded reward-to-go row.
pub fn decode_matrix(
    m: ArrayView2<'_, f64>,
    layout: &ChannelLayout,
    stats: &NormalizationStats,
) -> Episode {
    let done_row = layout.done_row();
    let len = (0..layout.t_max)
        .find(|&t| stats.denormalize(done_row, m[[done_row, t]]) >= DONE_THRESHOLD)
        .map_or(layout.t_max, |t| t + 1);

    let mut obs = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    for t in 0..len {
        let mut obs_t = Vec::with_capacity(layout.num_agents);
        let mut act_t = Vec::with_capacity(layout.num_agents);
        for agent in 0..layout.num_agents {
            obs_t.push(
                (0..layout.obs_dim)
                    .map(|d| {
                        let row = layout.obs_row(agent, d);
                        stats.denormalize(row, m[[row, t]])
                    })
                    .collect(),
            );
            let best = layout
                .agent_action_rows(agent)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (a, row)| {
                    let v = m[[row, t]];
                    if v > best.1 {
                        (a, v)
                    } else {
                        best
                    }
                })
                .0;
            act_t.push(best);
        }
        obs.push(obs_t);
        actions.push(act_t);
    }
    let row_values = |row: usize| -> Vec<f64> {
        (0..len).map(|t| stats.denormalize(row, m[[row, t]])).collect()
    };
    Episode {
        num_agents: layout.num_agents,
        obs,
        actions,
        rewards: row_values(layout.reward_row()),
        rtg: Some(row_values(layout.q_row())),
        source: None,
    }
}

pub fn detensorize(ds: &TensorizedDataset, index: usize) -> Result<Episode> {
    if index >= ds.len() {
        return Err(Error::OutOfRange {
            index,
            len: ds.len(),
        });
    }
    Ok(decode_matrix(ds.sample(index), &ds.layout, &ds.stats))
}
