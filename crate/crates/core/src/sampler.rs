//! Ancestral sampling from a trained denoiser and assembly of the augmented
//! dataset.

use candle_core::{Device, Tensor};
use log::info;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{Denoiser, DiffusionModel, NoiseSchedule};
use crate::episode::{compute_reward_to_go, decode_matrix, ChannelLayout, Episode, NormalizationStats, Source};
use crate::error::{invalid, Result};
use crate::nn::{tensor_from_f64, tensor_to_f64};
use crate::seed;

/// Chains sampled together through one network call.
const CHAIN_BATCH: usize = 64;

/// One reverse transition `τ_k → τ_{k-1}` for a batch of chains at the same step.
///
/// The predicted clean trajectory is clipped to `[-1, 1]` before forming the
/// posterior mean; no noise is added at `k = 1`.
pub fn reverse_step(
    tau_k: &Tensor,
    k: usize,
    model: &impl Denoiser,
    schedule: &NoiseSchedule,
    eps: &Tensor,
) -> Result<Tensor> {
    schedule.validate_step(k)?;
    let b = tau_k.dim(0)?;
    let x0 = model.denoise(tau_k, &vec![k; b])?.detach().clamp(-1.0, 1.0)?;
    let (c0, ck) = schedule.posterior_mean_coefs(k);
    let mean = (x0.affine(c0, 0.0)? + tau_k.affine(ck, 0.0)?)?;
    if k == 1 {
        return Ok(mean);
    }
    let sigma = schedule.posterior_variance(k).sqrt();
    Ok((mean + eps.affine(sigma, 0.0)?)?.detach())
}

fn normal_tensor(rngs: &mut [seed::Rng], f: usize, t: usize, device: &Device) -> Result<Tensor> {
    let mut v = Vec::with_capacity(rngs.len() * f * t);
    for rng in rngs.iter_mut() {
        v.extend((0..f * t).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    tensor_from_f64(&v, &[rngs.len(), f, t], device)
}

/// Draw `count` trajectories of shape `(F, T_max)` by iterating the reverse
/// process from pure noise. Chain `i` uses its own stream derived from `seed`.
pub fn sample_trajectories(model: &DiffusionModel, count: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    sample_with(model, &model.schedule, &model.layout, count, seed)
}

pub(crate) fn sample_with(
    model: &impl Denoiser,
    schedule: &NoiseSchedule,
    layout: &ChannelLayout,
    count: usize,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    if count == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let (f, t) = (layout.num_features(), layout.t_max);
    let device = Device::Cpu;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let n = CHAIN_BATCH.min(count - start);
        let mut rngs: Vec<seed::Rng> = (start..start + n)
            .map(|i| seed::rng(seed::derive_stream(seed, i as u64)))
            .collect();
        let mut x = normal_tensor(&mut rngs, f, t, &device)?;
        for k in (1..=schedule.steps()).rev() {
            let eps = normal_tensor(&mut rngs, f, t, &device)?;
            x = reverse_step(&x, k, model, schedule, &eps)?;
        }
        let values = Array3::from_shape_vec((n, f, t), tensor_to_f64(&x)?)
            .expect("tensor shape matches");
        out.extend(values.axis_iter(Axis(0)).map(|m| m.to_owned()));
        start += n;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct DecodedSamples {
    pub episodes: Vec<Episode>,
    /// Mean of the generated reward-to-go row over each kept episode, raw scale.
    pub generated_q_means: Vec<f64>,
    pub dropped: usize,
}

/// Decode samples into episodes, re-deriving reward-to-go from the decoded rewards.
pub fn decode_and_filter(
    samples: &[Array2<f64>],
    layout: &ChannelLayout,
    stats: &NormalizationStats,
    gamma: f64,
) -> Result<DecodedSamples> {
    let mut out = DecodedSamples::default();
    for m in samples {
        let mut ep = decode_matrix(m.view(), layout, stats);
        if ep.is_empty() {
            out.dropped += 1;
            continue;
        }
        let generated = ep.rtg.take().unwrap_or_default();
        let q_mean = generated.iter().sum::<f64>() / generated.len().max(1) as f64;
        let ep = compute_reward_to_go(ep, gamma)?.with_source(Source::Synthetic);
        out.generated_q_means.push(q_mean);
        out.episodes.push(ep);
    }
    if out.dropped > 0 {
        info!("dropped {} empty decoded episodes", out.dropped);
    }
    Ok(out)
}

/// Cap on redraw rounds when decoded samples come back empty.
const MAX_REDRAW_ROUNDS: usize = 16;

/// Exactly `count` decoded synthetic episodes.
///
/// Samples that decode to an empty episode are replaced by fresh chains drawn
/// from later streams of the same seed.
pub fn synthesize(model: &DiffusionModel, count: usize, seed: u64) -> Result<Vec<Episode>> {
    let mut synthetic = Vec::with_capacity(count);
    let mut round = 0;
    while synthetic.len() < count {
        if round == MAX_REDRAW_ROUNDS {
            return Err(invalid("sampler keeps producing empty episodes"));
        }
        let samples = sample_trajectories(model, count - synthetic.len(), seed::derive_stream(seed, round as u64))?;
        let decoded = decode_and_filter(&samples, &model.layout, &model.stats, model.config.gamma)?;
        synthetic.extend(decoded.episodes);
        round += 1;
    }
    Ok(synthetic)
}

/// `D_real ∪ D_syn` with exactly `scale · |D_real|` synthetic episodes.
pub fn augment(real: &[Episode], model: &DiffusionModel, scale: usize, seed: u64) -> Result<Vec<Episode>> {
    if scale == 0 {
        return Err(invalid("upsampling scale must be at least 1"));
    }
    let mut out: Vec<Episode> = real
        .iter()
        .cloned()
        .map(|e| e.with_source(Source::Real))
        .collect();
    out.extend(synthesize(model, scale * real.len(), seed)?);
    Ok(out)
}
