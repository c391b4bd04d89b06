//! Seeded parameter store and thin layer wrappers over candle.
//!
//! candle's stock initializers draw from a thread-local RNG, so every
//! parameter here is initialized from an explicit seeded stream instead.

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::GroupNorm;
use rand::Rng;

use crate::container;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered, named collection of trainable variables.
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    rng: seed::Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: seed::rng(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn push(&mut self, name: String, values: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        let t = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(t)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let bound = bound as f32;
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(name.into(), values, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        self.push(name.into(), vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.entries
            .iter()
            .map(|(name, v)| ParamSpec {
                name: name.clone(),
                shape: v.dims().to_vec(),
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// All parameters flattened in store order.
    pub fn flatten(&self) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (_, v) in &self.entries {
            out.extend(v.as_tensor().flatten_all()?.to_vec1::<f32>()?);
        }
        Ok(out)
    }

    /// Overwrite parameters from a flat buffer laid out as `specs` describes.
    pub fn load_flat(&mut self, specs: &[ParamSpec], values: &[f32]) -> Result<()> {
        if specs != self.specs().as_slice() {
            return Err(Error::Checkpoint("parameter layout does not match the model".into()));
        }
        let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
        if total != values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {total} parameters, found {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for (_, var) in &self.entries {
            let n = var.elem_count();
            let t = Tensor::from_slice(&values[offset..offset + n], var.dims(), &self.device)?;
            var.set(&t)?;
            offset += n;
        }
        Ok(())
    }

    /// Copy values from another store with the same layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for ((_, dst), (_, src)) in self.entries.iter().zip(&other.entries) {
            dst.set(&src.as_tensor().copy()?)?;
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, path: &std::path::Path, magic: &[u8; 8], header: &[u8]) -> Result<()> {
        let flat = self.flatten()?;
        container::write(path, magic, header, &[flat.len()], &container::f32_bytes(&flat))
    }
}

#[derive(Debug, Clone)]
pub struct Linear(candle_nn::Linear);

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.uniform(format!("{name}.weight"), &[fan_out, fan_in], bound)?;
        let b = ps.uniform(format!("{name}.bias"), &[fan_out], bound)?;
        Ok(Self(candle_nn::Linear::new(w, Some(b))))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.0.forward(x)?)
    }
}

/// 1-D convolution with `kernel / 2` zero padding, computed as stacked shifted
/// slices times a weight matrix.
///
/// candle's native conv1d backward returns wrong kernel gradients on CPU, so
/// the gradient here flows only through slicing, stacking and matmul.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    stride: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let w = ps.uniform(format!("{name}.weight"), &[out_ch, in_ch, kernel], bound)?;
        let b = ps.uniform(format!("{name}.bias"), &[out_ch], bound)?;
        Self::from_parts(w, b, stride)
    }

    /// `weight: (out, in, kernel)`, `bias: (out,)`.
    pub fn from_parts(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        let (_, _, kernel) = weight.dims3()?;
        if stride == 0 || kernel == 0 {
            return Err(Error::InvalidInput("conv stride and kernel must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
        })
    }

    /// `(B, C_in, T)` to `(B, C_out, ceil(T / stride))`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let (o, _, k) = self.weight.dims3()?;
        let pad = self.kernel / 2;
        let xp = x.pad_with_zeros(2, pad, k - 1 - pad)?;
        let cols = if k == 1 {
            xp
        } else {
            let slices: Vec<Tensor> = (0..k).map(|j| xp.narrow(2, j, t)).collect::<candle_core::Result<_>>()?;
            Tensor::stack(&slices, 2)?.reshape((b, c * k, t))?
        };
        // One 2-D matmul over all batch columns keeps the weight gradient a plain product.
        let cols = cols.transpose(0, 1)?.contiguous()?.reshape((c * k, b * t))?;
        let w = self.weight.reshape((o, c * k))?;
        let y = w.matmul(&cols)?.broadcast_add(&self.bias.reshape((o, 1))?)?;
        let mut y = y.reshape((o, b, t))?.transpose(0, 1)?.contiguous()?;
        if self.stride > 1 {
            let s = self.stride;
            let out = t.div_ceil(s);
            if out * s > t {
                y = y.pad_with_zeros(2, 0, out * s - t)?;
            }
            y = y.reshape((b, o, out, s))?.narrow(3, 0, 1)?.squeeze(3)?;
        }
        Ok(y)
    }
}

pub fn group_norm(ps: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<GroupNorm> {
    let w = ps.constant(format!("{name}.weight"), &[channels], 1.0)?;
    let b = ps.constant(format!("{name}.bias"), &[channels], 0.0)?;
    Ok(GroupNorm::new(w, b, channels, groups, 1e-5)?)
}

pub fn tensor_from_f64(values: &[f64], shape: &[usize], device: &Device) -> Result<Tensor> {
    let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
    Ok(Tensor::from_vec(v, shape, device)?)
}

pub fn tensor_to_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?)
}
