//! Temporal U-Net that maps a noisy trajectory and its diffusion step to a
//! prediction of the clean trajectory.

use candle_core::{Device, Module, Tensor, D};
use candle_nn::GroupNorm;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{group_norm, Conv1d, Linear, ParamStore};

/// Anything that predicts `τ̂_0` from `(τ_k, k)`.
///
/// Input and output are `(B, F, T)`; `steps` holds one diffusion step per sample.
pub trait Denoiser {
    fn denoise(&self, noisy: &Tensor, steps: &[usize]) -> Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Channel width of the first resolution level.
    pub base_width: usize,
    /// Width multiplier per resolution level.
    pub width_mults: Vec<usize>,
    pub kernel_size: usize,
    pub groups: usize,
    pub step_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            width_mults: vec![1, 2, 4],
            kernel_size: 5,
            groups: 8,
            step_embed_dim: 32,
        }
    }
}

/// Conv → GroupNorm → SiLU.
struct ConvBlock {
    conv: Conv1d,
    norm: GroupNorm,
}

impl ConvBlock {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, cfg: &DenoiserConfig) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(ps, &format!("{name}.conv"), cin, cout, cfg.kernel_size, 1)?,
            norm: group_norm(ps, &format!("{name}.norm"), cout, cfg.groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.silu()?)
    }
}

struct ResidualBlock {
    first: ConvBlock,
    second: ConvBlock,
    step_proj: Linear,
    skip: Option<Conv1d>,
}

impl ResidualBlock {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, cfg: &DenoiserConfig) -> Result<Self> {
        Ok(Self {
            first: ConvBlock::new(ps, &format!("{name}.first"), cin, cout, cfg)?,
            second: ConvBlock::new(ps, &format!("{name}.second"), cout, cout, cfg)?,
            step_proj: Linear::new(ps, &format!("{name}.step"), cfg.step_embed_dim, cout)?,
            skip: if cin == cout {
                None
            } else {
                Some(Conv1d::new(ps, &format!("{name}.skip"), cin, cout, 1, 1)?)
            },
        })
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(x)?;
        let bias = self.step_proj.forward(&emb.silu()?)?.unsqueeze(D::Minus1)?;
        let h = self.second.forward(&h.broadcast_add(&bias)?)?;
        let residual = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((h + residual)?)
    }
}

struct Level {
    blocks: [ResidualBlock; 2],
    resample: Option<Conv1d>,
}

pub struct TemporalUnet {
    config: DenoiserConfig,
    features: usize,
    embed_in: Linear,
    embed_out: Linear,
    down: Vec<Level>,
    mid: [ResidualBlock; 2],
    up: Vec<Level>,
    head: ConvBlock,
    out: Conv1d,
    params: ParamStore,
}

/// Sinusoidal embedding of integer steps, `(B, dim)`.
pub fn step_embedding(steps: &[usize], dim: usize, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let scale = (10_000f64).ln() / (half.max(2) - 1) as f64;
    let mut values = Vec::with_capacity(steps.len() * dim);
    for &k in steps {
        let k = k as f64;
        let freqs = (0..half).map(|i| k * (-scale * i as f64).exp());
        let (sin, cos): (Vec<f32>, Vec<f32>) = freqs.map(|a| (a.sin() as f32, a.cos() as f32)).unzip();
        values.extend(sin);
        values.extend(cos);
    }
    Ok(Tensor::from_vec(values, (steps.len(), 2 * half), device)?)
}

impl TemporalUnet {
    pub fn new(features: usize, config: DenoiserConfig, seed: u64) -> Result<Self> {
        if config.width_mults.is_empty() || config.step_embed_dim < 4 || config.step_embed_dim % 2 != 0 {
            return Err(invalid("denoiser needs at least one level and an even step embedding >= 4"));
        }
        let mut ps = ParamStore::new(seed);
        let cfg = &config;
        let widths: Vec<usize> = cfg.width_mults.iter().map(|m| m * cfg.base_width).collect();
        if let Some(w) = widths.iter().find(|&&w| w % cfg.groups != 0) {
            return Err(invalid(format!("width {w} not divisible by {} groups", cfg.groups)));
        }
        let emb = cfg.step_embed_dim;
        let embed_in = Linear::new(&mut ps, "step_embed.0", emb, emb * 4)?;
        let embed_out = Linear::new(&mut ps, "step_embed.1", emb * 4, emb)?;

        let levels = widths.len();
        let mut down = Vec::with_capacity(levels);
        let mut cin = features;
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("down.{i}");
            down.push(Level {
                blocks: [
                    ResidualBlock::new(&mut ps, &format!("{name}.0"), cin, w, cfg)?,
                    ResidualBlock::new(&mut ps, &format!("{name}.1"), w, w, cfg)?,
                ],
                resample: if i + 1 < levels {
                    Some(Conv1d::new(&mut ps, &format!("{name}.downsample"), w, w, 3, 2)?)
                } else {
                    None
                },
            });
            cin = w;
        }
        let deepest = *widths.last().expect("non-empty");
        let mid = [
            ResidualBlock::new(&mut ps, "mid.0", deepest, deepest, cfg)?,
            ResidualBlock::new(&mut ps, "mid.1", deepest, deepest, cfg)?,
        ];
        let mut up = Vec::with_capacity(levels.saturating_sub(1));
        for i in (1..levels).rev() {
            let (wide, narrow) = (widths[i], widths[i - 1]);
            let name = format!("up.{i}");
            up.push(Level {
                blocks: [
                    ResidualBlock::new(&mut ps, &format!("{name}.0"), wide * 2, narrow, cfg)?,
                    ResidualBlock::new(&mut ps, &format!("{name}.1"), narrow, narrow, cfg)?,
                ],
                resample: Some(Conv1d::new(&mut ps, &format!("{name}.upsample"), narrow, narrow, 3, 1)?),
            });
        }
        let head = ConvBlock::new(&mut ps, "head", widths[0], widths[0], cfg)?;
        let out = Conv1d::new(&mut ps, "out", widths[0], features, 1, 1)?;
        Ok(Self {
            config,
            features,
            embed_in,
            embed_out,
            down,
            mid,
            up,
            head,
            out,
            params: ps,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Time length the network runs at: `t` rounded up so every downsampling halves evenly.
    fn padded_len(&self, t: usize) -> usize {
        let factor = 1usize << (self.down.len() - 1);
        t.div_ceil(factor) * factor
    }

    pub fn forward(&self, x: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let (b, f, t) = x.dims3()?;
        if f != self.features || steps.len() != b {
            return Err(invalid(format!(
                "denoiser expects ({} steps, {} features), got ({}, {f})",
                b, self.features, steps.len()
            )));
        }
        let padded = self.padded_len(t);
        let mut h = if padded > t {
            x.pad_with_zeros(D::Minus1, 0, padded - t)?
        } else {
            x.clone()
        };

        let emb = step_embedding(steps, self.config.step_embed_dim, x.device())?;
        let emb = self.embed_out.forward(&self.embed_in.forward(&emb)?.silu()?)?;

        let mut skips = Vec::with_capacity(self.down.len());
        for level in &self.down {
            for block in &level.blocks {
                h = block.forward(&h, &emb)?;
            }
            skips.push(h.clone());
            if let Some(ds) = &level.resample {
                h = ds.forward(&h)?;
            }
        }
        for block in &self.mid {
            h = block.forward(&h, &emb)?;
        }
        // Deepest skip pairs with the mid output; the shallowest is unused.
        for level in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = Tensor::cat(&[&h, &skip], 1)?;
            for block in &level.blocks {
                h = block.forward(&h, &emb)?;
            }
            if let Some(us) = &level.resample {
                let len = h.dim(D::Minus1)?;
                h = us.forward(&h.upsample_nearest1d(len * 2)?)?;
            }
        }
        let h = self.out.forward(&self.head.forward(&h)?)?;
        Ok(if padded > t { h.narrow(D::Minus1, 0, t)? } else { h })
    }
}

impl Denoiser for TemporalUnet {
    fn denoise(&self, noisy: &Tensor, steps: &[usize]) -> Result<Tensor> {
        self.forward(noisy, steps)
    }
}
