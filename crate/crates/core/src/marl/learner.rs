//! Offline QMIX with a conservative (CQL) or batch-constrained (discrete BCQ)
//! regularizer.

use std::path::Path;

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::behavior::Policy;
use super::env::{EnvConfig, NOOP};
use crate::container;
use crate::episode::Episode;
use crate::error::{invalid, Error, Result};
use crate::nn::{Linear, ParamSpec, ParamStore};
use crate::seed;

/// Index of the alive flag inside an agent observation.
const ALIVE_DIM: usize = 3;
const MASKED: f32 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Cql { weight: f64 },
    Bcq { threshold: f64 },
}

impl Regularizer {
    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Cql { .. } => "qmix-cql",
            Regularizer::Bcq { .. } => "qmix-bcq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub regularizer: Regularizer,
    pub hidden: usize,
    pub mixer_embed: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub target_period: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::Cql { weight: 1.0 },
            hidden: 64,
            mixer_embed: 32,
            learning_rate: 5e-4,
            batch_size: 32,
            gamma: 0.99,
            target_period: 200,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        match self.regularizer {
            Regularizer::Cql { weight } if !(weight >= 0.0 && weight.is_finite()) => {
                return Err(invalid(format!("CQL weight {weight} must be non-negative")));
            }
            Regularizer::Bcq { threshold } if !(0.0..=1.0).contains(&threshold) => {
                return Err(invalid(format!("BCQ threshold {threshold} outside [0, 1]")));
            }
            _ => {}
        }
        if self.hidden == 0 || self.mixer_embed == 0 || self.batch_size == 0 || self.target_period == 0 {
            return Err(invalid("learner sizes and target period must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("learning rate must be positive and gamma in (0, 1]"));
        }
        Ok(())
    }
}

/// `logsumexp(q) - q[data_action]`.
pub fn cql_penalty(q_values: &[f64], data_action: usize) -> Result<f64> {
    let Some(&taken) = q_values.get(data_action) else {
        return Err(invalid(format!(
            "data action {data_action} outside [0, {})",
            q_values.len()
        )));
    };
    let m = q_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + q_values.iter().map(|q| (q - m).exp()).sum::<f64>().ln();
    Ok(lse - taken)
}

/// Actions whose probability relative to the most likely action reaches `threshold`.
pub fn bcq_admissible(behavior_probs: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if behavior_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid("behavior probabilities must be finite and non-negative"));
    }
    let max = behavior_probs.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(invalid("behavior probabilities are all zero"));
    }
    let sum: f64 = behavior_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("behavior probabilities sum to {sum}, not 1")));
    }
    Ok(behavior_probs.iter().map(|p| p / max >= threshold).collect())
}

/// Shared per-agent network over `[obs, one-hot agent id]`.
#[derive(Debug, Clone)]
struct AgentNet {
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

impl AgentNet {
    fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(ps, &format!("{name}.l1"), input, hidden)?,
            l2: Linear::new(ps, &format!("{name}.l2"), hidden, hidden)?,
            l3: Linear::new(ps, &format!("{name}.l3"), hidden, out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.l1.forward(x)?.relu()?;
        let h = self.l2.forward(&h)?.relu()?;
        self.l3.forward(&h)
    }
}

/// Hypernetwork mixer; weights on agent utilities pass through `abs`.
#[derive(Debug, Clone)]
struct Mixer {
    w1: Linear,
    b1: Linear,
    w2: Linear,
    v1: Linear,
    v2: Linear,
    agents: usize,
    embed: usize,
}

impl Mixer {
    fn new(ps: &mut ParamStore, state: usize, agents: usize, embed: usize) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(ps, "mixer.w1", state, agents * embed)?,
            b1: Linear::new(ps, "mixer.b1", state, embed)?,
            w2: Linear::new(ps, "mixer.w2", state, embed)?,
            v1: Linear::new(ps, "mixer.v1", state, embed)?,
            v2: Linear::new(ps, "mixer.v2", embed, 1)?,
            agents,
            embed,
        })
    }

    /// `q: (B, N)`, `state: (B, S)` to `(B,)`.
    fn forward(&self, q: &Tensor, state: &Tensor) -> Result<Tensor> {
        let b = q.dim(0)?;
        let w1 = self.w1.forward(state)?.abs()?.reshape((b, self.agents, self.embed))?;
        let b1 = self.b1.forward(state)?.reshape((b, 1, self.embed))?;
        let h = q.reshape((b, 1, self.agents))?.matmul(&w1)?.broadcast_add(&b1)?.elu(1.0)?;
        let w2 = self.w2.forward(state)?.abs()?.reshape((b, self.embed, 1))?;
        let v = self.v2.forward(&self.v1.forward(state)?.relu()?)?.reshape((b, 1, 1))?;
        Ok(h.matmul(&w2)?.broadcast_add(&v)?.reshape(b)?)
    }
}

#[derive(Debug, Clone)]
struct QNets {
    agent: AgentNet,
    mixer: Mixer,
}

impl QNets {
    fn new(ps: &mut ParamStore, dims: &Dims, config: &LearnerConfig) -> Result<Self> {
        Ok(Self {
            agent: AgentNet::new(ps, "agent", dims.input(), config.hidden, dims.num_actions)?,
            mixer: Mixer::new(ps, dims.state(), dims.num_agents, config.mixer_embed)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Dims {
    num_agents: usize,
    obs_dim: usize,
    num_actions: usize,
}

impl Dims {
    fn input(&self) -> usize {
        self.obs_dim + self.num_agents
    }

    fn state(&self) -> usize {
        self.obs_dim * self.num_agents
    }

    /// `(rows * N, d + N)` agent inputs from `(rows, N, d)` observations.
    fn agent_inputs(&self, obs: &[f32], rows: usize, device: &Device) -> Result<Tensor> {
        let (n, d) = (self.num_agents, self.obs_dim);
        let mut v = Vec::with_capacity(rows * n * self.input());
        for r in 0..rows {
            for a in 0..n {
                let o = &obs[(r * n + a) * d..(r * n + a + 1) * d];
                v.extend_from_slice(o);
                v.extend((0..n).map(|i| if i == a { 1.0f32 } else { 0.0 }));
            }
        }
        Ok(Tensor::from_vec(v, (rows * n, self.input()), device)?)
    }
}

/// Flat transition storage built from episodes.
struct Transitions {
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<u32>,
    rewards: Vec<f32>,
    done: Vec<f32>,
    /// Next-step action availability: inactive agents may only idle.
    next_alive: Vec<bool>,
    len: usize,
}

impl Transitions {
    fn new(dims: &Dims, episodes: &[Episode]) -> Result<Self> {
        let mut t = Transitions {
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            done: Vec::new(),
            next_alive: Vec::new(),
            len: 0,
        };
        let zeros = vec![vec![0.0; dims.obs_dim]; dims.num_agents];
        for ep in episodes {
            if ep.num_agents != dims.num_agents {
                return Err(invalid(format!(
                    "episode has {} agents, learner expects {}",
                    ep.num_agents, dims.num_agents
                )));
            }
            ep.validate(dims.obs_dim, dims.num_actions)?;
            let len = ep.len();
            for step in 0..len {
                let terminal = step + 1 == len;
                let next = if terminal { &zeros } else { &ep.obs[step + 1] };
                t.obs.extend(ep.obs[step].iter().flatten().map(|&v| v as f32));
                t.next_obs.extend(next.iter().flatten().map(|&v| v as f32));
                t.next_alive.extend(next.iter().map(|o| o[ALIVE_DIM] > 0.5));
                t.actions.extend(ep.actions[step].iter().map(|&a| a as u32));
                t.rewards.push(ep.rewards[step] as f32);
                t.done.push(if terminal { 1.0 } else { 0.0 });
                t.len += 1;
            }
        }
        if t.len == 0 {
            return Err(invalid("offline dataset has no transitions"));
        }
        Ok(t)
    }
}

fn gather_rows<T: Copy>(src: &[T], width: usize, idx: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

fn softmax_rows(logits: &[f32], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let e: Vec<f64> = row.iter().map(|&x| (x as f64 - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|x| x / s));
    }
    out
}

/// Relative-probability mask computed directly on a softmax row.
fn relative_mask(probs: &[f64], threshold: f64) -> Vec<bool> {
    let max = probs.iter().copied().fold(0.0, f64::max);
    probs.iter().map(|p| p / max >= threshold).collect()
}

/// A trained offline learner; acts greedily and decentrally.
pub struct OfflineLearner {
    config: LearnerConfig,
    dims: Dims,
    store: ParamStore,
    nets: QNets,
    behavior: Option<(ParamStore, AgentNet)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LearnerLog {
    pub losses: Vec<f64>,
    pub td_errors: Vec<f64>,
}

impl OfflineLearner {
    fn build(config: &LearnerConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed::derive_seed(seed, "learner-init"));
        let nets = QNets::new(&mut store, &dims, config)?;
        let behavior = match config.regularizer {
            Regularizer::Bcq { .. } => {
                let mut ps = ParamStore::new(seed::derive_seed(seed, "behavior-init"));
                let net = AgentNet::new(&mut ps, "behavior", dims.input(), config.hidden, dims.num_actions)?;
                Some((ps, net))
            }
            Regularizer::Cql { .. } => None,
        };
        Ok(Self {
            config: config.clone(),
            dims,
            store,
            nets,
            behavior,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    /// Flattened utility and mixer parameters.
    pub fn q_parameters(&self) -> Result<Vec<f32>> {
        self.store.flatten()
    }

    /// Per-agent utilities for one joint observation, `[agent][action]`.
    pub fn utilities(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let q = self.forward_rows(&self.nets.agent, obs)?;
        Ok(q.chunks(self.dims.num_actions).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
    }

    /// Behavior-classifier probabilities, BCQ mode only.
    pub fn behavior_probs(&self, obs: &[Vec<f64>]) -> Result<Option<Vec<Vec<f64>>>> {
        let Some((_, net)) = &self.behavior else {
            return Ok(None);
        };
        let logits = self.forward_rows(net, obs)?;
        let probs = softmax_rows(&logits, self.dims.num_actions);
        Ok(Some(probs.chunks(self.dims.num_actions).map(<[f64]>::to_vec).collect()))
    }

    fn forward_rows(&self, net: &AgentNet, obs: &[Vec<f64>]) -> Result<Vec<f32>> {
        if obs.len() != self.dims.num_agents || obs.iter().any(|o| o.len() != self.dims.obs_dim) {
            return Err(invalid("observation shape does not match the learner"));
        }
        let flat: Vec<f32> = obs.iter().flatten().map(|&v| v as f32).collect();
        let x = self.dims.agent_inputs(&flat, 1, self.store.device())?;
        Ok(net.forward(&x)?.flatten_all()?.to_vec1::<f32>()?)
    }

    /// Mixer output for one point: `q` has one utility per agent, `state` is
    /// the concatenated observations.
    pub fn mix(&self, q: &[f64], state: &[f64]) -> Result<f64> {
        if q.len() != self.dims.num_agents || state.len() != self.dims.state() {
            return Err(invalid("mixer input shape does not match the learner"));
        }
        let dev = self.store.device();
        let qt = Tensor::from_vec(q.iter().map(|&v| v as f32).collect::<Vec<_>>(), (1, q.len()), dev)?;
        let st = Tensor::from_vec(state.iter().map(|&v| v as f32).collect::<Vec<_>>(), (1, state.len()), dev)?;
        let out = self.nets.mixer.forward(&qt, &st)?;
        Ok(out.to_vec1::<f32>()?[0] as f64)
    }

    /// Greedy action per agent, restricted to the admissible set in BCQ mode.
    pub fn greedy_actions(&self, obs: &[Vec<f64>]) -> Result<Vec<usize>> {
        let q = self.utilities(obs)?;
        let probs = self.behavior_probs(obs)?;
        let threshold = match self.config.regularizer {
            Regularizer::Bcq { threshold } => threshold,
            Regularizer::Cql { .. } => 0.0,
        };
        Ok(q.iter()
            .enumerate()
            .map(|(i, qi)| {
                let mask = probs
                    .as_ref()
                    .map(|p| relative_mask(&p[i], threshold))
                    .unwrap_or_else(|| vec![true; qi.len()]);
                qi.iter()
                    .zip(&mask)
                    .enumerate()
                    .filter(|(_, (_, &ok))| ok)
                    .max_by(|a, b| a.1 .0.total_cmp(b.1 .0).then(b.0.cmp(&a.0)))
                    .map_or(NOOP, |(a, _)| a)
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = LearnerHeader {
            config: self.config.clone(),
            dims: self.dims,
            q_params: self.store.specs(),
            behavior_params: self.behavior.as_ref().map(|(ps, _)| ps.specs()),
        };
        let mut flat = self.store.flatten()?;
        if let Some((ps, _)) = &self.behavior {
            flat.extend(ps.flatten()?);
        }
        container::write(
            path.as_ref(),
            container::LEARNER_CHECKPOINT,
            &serde_json::to_vec(&header)?,
            &[flat.len()],
            &container::f32_bytes(&flat),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, _, payload) = container::read(path.as_ref(), container::LEARNER_CHECKPOINT)?;
        let header: LearnerHeader = serde_json::from_slice(&header)?;
        let mut learner = Self::build(&header.config, header.dims, 0)?;
        let values = container::bytes_f32(&payload)?;
        let n_q: usize = header.q_params.iter().map(|s| s.shape.iter().product::<usize>()).sum();
        if values.len() < n_q {
            return Err(Error::Checkpoint("payload shorter than the parameter layout".into()));
        }
        learner.store.load_flat(&header.q_params, &values[..n_q])?;
        match (&mut learner.behavior, &header.behavior_params) {
            (Some((ps, _)), Some(specs)) => ps.load_flat(specs, &values[n_q..])?,
            (None, None) if values.len() == n_q => {}
            _ => return Err(Error::Checkpoint("behavior network layout mismatch".into())),
        }
        Ok(learner)
    }
}

#[derive(Serialize, Deserialize)]
struct LearnerHeader {
    config: LearnerConfig,
    dims: Dims,
    q_params: Vec<ParamSpec>,
    behavior_params: Option<Vec<ParamSpec>>,
}

impl Policy for OfflineLearner {
    fn act(&mut self, obs: &[Vec<f64>], _rng: &mut seed::Rng) -> Result<Vec<usize>> {
        self.greedy_actions(obs)
    }
}

/// Train a QMIX learner on offline episodes for `iterations` gradient steps.
///
/// Each step draws `batch_size` transitions uniformly with replacement. The
/// target is `r + γ (1 - done) Q_tot_target(s', argmax over admissible a')`.
pub fn train_offline(
    config: &LearnerConfig,
    env: &EnvConfig,
    dataset: &[Episode],
    iterations: usize,
    seed: u64,
) -> Result<(OfflineLearner, LearnerLog)> {
    if dataset.is_empty() {
        return Err(invalid("offline dataset is empty"));
    }
    env.validate()?;
    let dims = Dims {
        num_agents: env.num_allies,
        obs_dim: env.obs_dim(),
        num_actions: env.num_actions(),
    };
    let learner = OfflineLearner::build(config, dims, seed)?;
    let data = Transitions::new(&dims, dataset)?;
    let device = learner.store.device().clone();

    let mut target_store = ParamStore::new(0);
    let target = QNets::new(&mut target_store, &dims, config)?;
    target_store.copy_from(&learner.store)?;

    let mut vars = learner.store.vars();
    if let Some((ps, _)) = &learner.behavior {
        vars.extend(ps.vars());
    }
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let (n, d, na) = (dims.num_agents, dims.obs_dim, dims.num_actions);
    let b = config.batch_size;
    let mut rng = seed::rng(seed::derive_seed(seed, "learner-batches"));
    let mut log = LearnerLog::default();
    for step in 0..iterations {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len)).collect();
        let obs = gather_rows(&data.obs, n * d, &idx);
        let next_obs = gather_rows(&data.next_obs, n * d, &idx);
        let actions = gather_rows(&data.actions, n, &idx);
        let next_alive = gather_rows(&data.next_alive, n, &idx);
        let rewards = gather_rows(&data.rewards, 1, &idx);
        let done = gather_rows(&data.done, 1, &idx);

        // Bootstrapped target, no gradient.
        let next_x = dims.agent_inputs(&next_obs, b, &device)?;
        let next_q = target.agent.forward(&next_x)?.flatten_all()?.to_vec1::<f32>()?;
        let next_probs = match &learner.behavior {
            Some((_, net)) => Some(softmax_rows(&net.forward(&next_x)?.detach().flatten_all()?.to_vec1::<f32>()?, na)),
            None => None,
        };
        let mut best = Vec::with_capacity(b * n);
        for row in 0..b * n {
            let q = &next_q[row * na..(row + 1) * na];
            let mut mask: Vec<bool> = (0..na).map(|a| next_alive[row] || a == NOOP).collect();
            if let (Some(p), Regularizer::Bcq { threshold }) = (&next_probs, config.regularizer) {
                let rel = relative_mask(&p[row * na..(row + 1) * na], threshold);
                let both: Vec<bool> = mask.iter().zip(&rel).map(|(x, y)| *x && *y).collect();
                if both.iter().any(|&x| x) {
                    mask = both;
                }
            }
            let v = q
                .iter()
                .zip(&mask)
                .map(|(&x, &ok)| if ok { x } else { MASKED })
                .fold(f32::NEG_INFINITY, f32::max);
            best.push(v);
        }
        let next_state = Tensor::from_vec(next_obs, (b, n * d), &device)?;
        let best = Tensor::from_vec(best, (b, n), &device)?;
        let next_tot = target.mixer.forward(&best, &next_state)?.to_vec1::<f32>()?;
        let y: Vec<f32> = (0..b)
            .map(|i| rewards[i] + config.gamma as f32 * (1.0 - done[i]) * next_tot[i])
            .collect();
        let y = Tensor::from_vec(y, b, &device)?;

        let x = dims.agent_inputs(&obs, b, &device)?;
        let q_all = learner.nets.agent.forward(&x)?;
        let act = Tensor::from_vec(actions.clone(), (b * n, 1), &device)?;
        let chosen = q_all.gather(&act, 1)?.squeeze(1)?;
        let state = Tensor::from_vec(obs, (b, n * d), &device)?;
        let q_tot = learner.nets.mixer.forward(&chosen.reshape((b, n))?, &state)?;
        let td = (q_tot - y)?.sqr()?.mean_all()?;
        let mut loss = td.clone();
        match config.regularizer {
            Regularizer::Cql { weight } if weight > 0.0 => {
                let penalty = (q_all.log_sum_exp(D::Minus1)? - &chosen)?.mean_all()?;
                loss = (loss + penalty.affine(weight, 0.0)?)?;
            }
            Regularizer::Bcq { .. } => {
                let (_, net) = learner.behavior.as_ref().expect("bcq owns a behavior net");
                let logits = net.forward(&x)?;
                let target_ids = Tensor::from_vec(actions, b * n, &device)?;
                loss = (loss + candle_nn::loss::cross_entropy(&logits, &target_ids)?)?;
            }
            _ => {}
        }
        let loss_value = loss.to_scalar::<f32>()? as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss_value}, td {}", td.to_scalar::<f32>()?),
            });
        }
        opt.backward_step(&loss)?;
        log.losses.push(loss_value);
        log.td_errors.push(td.to_scalar::<f32>()? as f64);
        if (step + 1) % config.target_period == 0 {
            target_store.copy_from(&learner.store)?;
        }
        if step % 500 == 0 {
            debug!("learner step {step}: loss {loss_value:.4}");
        }
    }
    Ok((learner, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
}

/// Roll out `episodes` games; episode `i` starts from its own derived stream.
pub fn evaluate(policy: &mut impl Policy, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(invalid("evaluation needs at least one episode"));
    }
    let returns: Vec<f64> = (0..episodes)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_stream(seed, i as u64));
            super::behavior::rollout(env, policy, &mut rng).map(|ep| ep.total_return())
        })
        .collect::<Result<_>>()?;
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(EvalReport {
        mean_return: mean,
        std_return: var.sqrt(),
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::behavior::{generate_offline_dataset, BehaviorQuality, FocusFirePolicy};

    struct Idle;

    impl Policy for Idle {
        fn act(&mut self, obs: &[Vec<f64>], _rng: &mut seed::Rng) -> Result<Vec<usize>> {
            Ok(vec![NOOP; obs.len()])
        }
    }

    #[test]
    fn cql_penalty_values() {
        assert!((cql_penalty(&[2.0; 8], 3).unwrap() - 8f64.ln()).abs() < 1e-12);
        let got = cql_penalty(&[0.0, 10.0], 1).unwrap();
        assert!((got - (-10f64).exp().ln_1p()).abs() < 1e-15);
        assert!((got - 4.54e-5).abs() < 1e-7);
        assert!(cql_penalty(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn bcq_masks() {
        assert_eq!(bcq_admissible(&[0.7, 0.2, 0.1], 0.25).unwrap(), vec![true, true, false]);
        assert_eq!(bcq_admissible(&[0.25; 4], 1.0).unwrap(), vec![true; 4]);
        assert_eq!(bcq_admissible(&[0.5, 0.3, 0.2], 1.0).unwrap(), vec![true, false, false]);
        assert!(bcq_admissible(&[0.0, 0.0], 0.5).is_err());
        assert!(bcq_admissible(&[0.5, 0.4], 0.5).is_err());
    }

    #[test]
    fn idle_policy_scores_zero_and_scripted_scores_positive() {
        let env = EnvConfig::default();
        let idle = evaluate(&mut Idle, &env, 10, 3).unwrap();
        assert_eq!(idle.mean_return, 0.0);
        let mut scripted = FocusFirePolicy::new(&env, 0.0);
        let r = evaluate(&mut scripted, &env, 10, 3).unwrap();
        assert!(r.mean_return > 0.0);
        assert_eq!(r, evaluate(&mut scripted, &env, 10, 3).unwrap());
    }

    #[test]
    fn vanishing_regularizers_agree() {
        let env = EnvConfig::default();
        let data = generate_offline_dataset(&env, BehaviorQuality::Poor, 5, 0.99, 2).unwrap();
        let cql = LearnerConfig {
            regularizer: Regularizer::Cql { weight: 0.0 },
            ..Default::default()
        };
        let bcq = LearnerConfig {
            regularizer: Regularizer::Bcq { threshold: 0.0 },
            ..Default::default()
        };
        let (a, _) = train_offline(&cql, &env, &data, 30, 7).unwrap();
        let (b, _) = train_offline(&bcq, &env, &data, 30, 7).unwrap();
        assert_eq!(a.q_parameters().unwrap(), b.q_parameters().unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let env = EnvConfig::default();
        let data = generate_offline_dataset(&env, BehaviorQuality::Poor, 3, 0.99, 2).unwrap();
        let cfg = LearnerConfig {
            regularizer: Regularizer::Bcq { threshold: 0.3 },
            ..Default::default()
        };
        let (learner, log) = train_offline(&cfg, &env, &data, 10, 1).unwrap();
        assert_eq!(log.losses.len(), 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("learner.bin");
        learner.save(&path).unwrap();
        let back = OfflineLearner::load(&path).unwrap();
        let obs = &data[0].obs[0];
        assert_eq!(learner.greedy_actions(obs).unwrap(), back.greedy_actions(obs).unwrap());
        assert_eq!(learner.q_parameters().unwrap(), back.q_parameters().unwrap());
        assert!(train_offline(&cfg, &env, &[], 10, 1).is_err());
    }
}
