//! x0-prediction loss with the Q-total hinge.
//!
//! Per sample `b`:
//!
//! ```text
//! mse_b   = mean over (F, T) of (τ_0 - τ̂_0)²
//! hinge_b = max(0, Q_max - Q_gen_b)
//! loss    = mean_b (mse_b + λ · hinge_b)
//! ```
//!
//! `Q_gen_b` is the mean of the predicted reward-to-go row over the sample's
//! valid columns and `Q_max` is the largest such mean among the clean targets
//! in the minibatch.

use candle_core::{DType, Tensor, D};
use ndarray::{Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::episode::{ChannelLayout, NormalizationStats};
use crate::error::{invalid, Result};

/// Scale on which `Q_max` and `Q_gen` are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSpace {
    #[default]
    Normalized,
    Raw,
}

/// Affine map `q ↦ scale·q + offset` from normalized Q means to the comparison space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QMap {
    pub scale: f64,
    pub offset: f64,
}

impl QMap {
    pub const IDENTITY: QMap = QMap {
        scale: 1.0,
        offset: 0.0,
    };

    pub fn new(space: QSpace, layout: &ChannelLayout, stats: &NormalizationStats) -> Self {
        match space {
            QSpace::Normalized => Self::IDENTITY,
            QSpace::Raw => {
                let row = layout.q_row();
                let lo = stats.denormalize(row, -1.0);
                let hi = stats.denormalize(row, 1.0);
                Self {
                    scale: (hi - lo) / 2.0,
                    offset: (hi + lo) / 2.0,
                }
            }
        }
    }

    fn apply(&self, q: f64) -> f64 {
        self.scale * q + self.offset
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// Batch mean of per-sample mean squared error.
    pub mse: f64,
    /// Batch mean of the unweighted hinge.
    pub hinge: f64,
    pub q_max_batch: f64,
    pub q_gen_mean: f64,
}

/// Mean of the reward-to-go row over columns `[0, length)`.
pub fn q_channel_mean(traj: ArrayView2<'_, f64>, layout: &ChannelLayout, length: usize) -> Result<f64> {
    if length == 0 || length > traj.ncols() {
        return Err(invalid(format!(
            "valid length {length} outside [1, {}]",
            traj.ncols()
        )));
    }
    let row = traj.row(layout.q_row());
    Ok(row.iter().take(length).sum::<f64>() / length as f64)
}

fn check_batch(targets: ArrayView3<'_, f64>, preds: ArrayView3<'_, f64>, lengths: &[usize]) -> Result<()> {
    if targets.shape()[0] == 0 {
        return Err(invalid("empty minibatch"));
    }
    if targets.shape() != preds.shape() || lengths.len() != targets.shape()[0] {
        return Err(invalid(format!(
            "batch shapes disagree: targets {:?}, predictions {:?}, {} lengths",
            targets.shape(),
            preds.shape(),
            lengths.len()
        )));
    }
    Ok(())
}

/// Loss value and its gradient with respect to the predictions, in f64.
pub fn guided_objective(
    targets: ArrayView3<'_, f64>,
    preds: ArrayView3<'_, f64>,
    lengths: &[usize],
    layout: &ChannelLayout,
    lambda: f64,
    qmap: QMap,
) -> Result<(LossTerms, Array3<f64>)> {
    check_batch(targets, preds, lengths)?;
    let (b, f, t) = targets.dim();
    let bf = b as f64;
    let cells = (f * t) as f64;

    let mut q_max = f64::NEG_INFINITY;
    for (sample, &len) in targets.outer_iter().zip(lengths) {
        q_max = q_max.max(qmap.apply(q_channel_mean(sample, layout, len)?));
    }

    let mut grad = Array3::zeros((b, f, t));
    let mut terms = LossTerms {
        q_max_batch: q_max,
        ..Default::default()
    };
    for i in 0..b {
        let diff = &preds.slice(ndarray::s![i, .., ..]) - &targets.slice(ndarray::s![i, .., ..]);
        terms.mse += diff.iter().map(|d| d * d).sum::<f64>() / cells / bf;
        grad.slice_mut(ndarray::s![i, .., ..])
            .assign(&(diff * (2.0 / cells / bf)));

        let len = lengths[i];
        let q_gen = qmap.apply(q_channel_mean(preds.slice(ndarray::s![i, .., ..]), layout, len)?);
        terms.q_gen_mean += q_gen / bf;
        let gap = q_max - q_gen;
        if gap > 0.0 {
            terms.hinge += gap / bf;
            let g = lambda * qmap.scale / (len as f64 * bf);
            for col in 0..len {
                grad[[i, layout.q_row(), col]] -= g;
            }
        }
    }
    terms.total = terms.mse + lambda * terms.hinge;
    Ok((terms, grad))
}

/// Differentiable form of [`guided_objective`] on candle tensors.
///
/// `targets` and `preds` are `(B, F, T)`; gradients flow through `preds` only.
pub fn guided_loss_tensor(
    targets: &Tensor,
    preds: &Tensor,
    lengths: &[usize],
    layout: &ChannelLayout,
    lambda: f64,
    qmap: QMap,
) -> Result<(Tensor, LossTerms)> {
    let (b, f, t) = targets.dims3()?;
    if b == 0 {
        return Err(invalid("empty minibatch"));
    }
    if preds.dims3()? != (b, f, t) || lengths.len() != b {
        return Err(invalid("prediction batch does not match targets"));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > t) {
        return Err(invalid(format!("valid length {bad} outside [1, {t}]")));
    }
    let dtype = preds.dtype();
    let device = preds.device();

    // Row of per-column weights 1/len over the valid prefix.
    let mut mask = vec![0.0f64; b * t];
    for (i, &len) in lengths.iter().enumerate() {
        mask[i * t..i * t + len].fill(1.0 / len as f64);
    }
    let mask = Tensor::from_vec(mask, (b, t), device)?.to_dtype(dtype)?;

    let q_row = layout.q_row();
    let q_mean = |x: &Tensor| -> Result<Tensor> {
        let row = x.narrow(1, q_row, 1)?.squeeze(1)?;
        Ok(row.mul(&mask)?.sum(D::Minus1)?.affine(qmap.scale, qmap.offset)?)
    };

    let q_target = q_mean(&targets.detach())?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let q_max = q_target.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mse_per = (preds - targets.detach())?.sqr()?.mean(D::Minus1)?.mean(D::Minus1)?;
    let q_gen = q_mean(preds)?;
    let hinge_per = q_gen.affine(-1.0, q_max)?.relu()?;
    let per_sample = (&mse_per + hinge_per.affine(lambda, 0.0)?)?;
    let loss = per_sample.mean_all()?;

    let mean_of = |x: &Tensor| -> Result<f64> {
        Ok(x.mean_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    };
    let terms = LossTerms {
        total: mean_of(&loss)?,
        mse: mean_of(&mse_per)?,
        hinge: mean_of(&hinge_per)?,
        q_max_batch: q_max,
        q_gen_mean: mean_of(&q_gen)?,
    };
    Ok((loss, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use candle_core::{Device, Var};
    use ndarray::Array2;
    use rand::Rng;

    fn layout() -> ChannelLayout {
        // F = 1 * (1 + 2) + 3 = 6
        ChannelLayout::new(1, 1, 2, 4).unwrap()
    }

    fn batch_with_q(qs: &[f64]) -> Array3<f64> {
        let l = layout();
        let mut a = Array3::zeros((qs.len(), l.num_features(), l.t_max));
        for (i, q) in qs.iter().enumerate() {
            a.slice_mut(ndarray::s![i, l.q_row(), ..]).fill(*q);
        }
        a
    }

    #[test]
    fn q_mean_cases() {
        let l = layout();
        let mut m = Array2::zeros((l.num_features(), 4));
        m.row_mut(l.q_row()).fill(0.3);
        assert!((q_channel_mean(m.view(), &l, 4).unwrap() - 0.3).abs() < 1e-15);
        m[[l.q_row(), 0]] = 1.0;
        m[[l.q_row(), 1]] = -1.0;
        assert_eq!(q_channel_mean(m.view(), &l, 2).unwrap(), 0.0);
        assert!(q_channel_mean(m.view(), &l, 0).is_err());
        assert!(q_channel_mean(m.view(), &l, 5).is_err());
    }

    #[test]
    fn q_mean_matches_explicit_loop() {
        let l = layout();
        let mut rng = seed::rng(9);
        let m = Array2::from_shape_fn((l.num_features(), 4), |_| rng.random_range(-1.0..1.0));
        for len in 1..=4 {
            let mut acc = 0.0;
            for t in 0..len {
                acc += m[[l.q_row(), t]];
            }
            let got = q_channel_mean(m.view(), &l, len).unwrap();
            assert!((got - acc / len as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_of_best_sample_has_no_hinge() {
        let targets = batch_with_q(&[0.1, 0.7, -0.2]);
        let (terms, _) = guided_objective(
            targets.view(),
            targets.view(),
            &[4, 4, 4],
            &layout(),
            0.1,
            QMap::IDENTITY,
        )
        .unwrap();
        assert_eq!(terms.mse, 0.0);
        assert!((terms.q_max_batch - 0.7).abs() < 1e-15);
        // samples 0 and 2 fall short of the max by 0.6 and 0.9
        assert!((terms.hinge - (0.6 + 0.9) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_clamped_above_max() {
        let targets = batch_with_q(&[0.2]);
        let preds = batch_with_q(&[0.5]);
        let (terms, _) =
            guided_objective(targets.view(), preds.view(), &[4], &layout(), 0.1, QMap::IDENTITY).unwrap();
        assert_eq!(terms.hinge, 0.0);
        assert!((terms.total - terms.mse).abs() < 1e-15);
    }

    #[test]
    fn hinge_is_linear_below_max() {
        let targets = batch_with_q(&[0.6]);
        let preds = batch_with_q(&[0.1]);
        let (terms, _) =
            guided_objective(targets.view(), preds.view(), &[4], &layout(), 0.1, QMap::IDENTITY).unwrap();
        assert!((0.1 * terms.hinge - 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let empty = Array3::zeros((0, 6, 4));
        assert!(guided_objective(empty.view(), empty.view(), &[], &layout(), 0.1, QMap::IDENTITY).is_err());
    }

    #[test]
    fn tensor_route_matches_reference() {
        let l = ChannelLayout::new(1, 2, 3, 6).unwrap(); // F = 8
        let mut rng = seed::rng(21);
        let (b, f, t) = (3, l.num_features(), l.t_max);
        let targets = Array3::from_shape_fn((b, f, t), |_| rng.random_range(-1.0..1.0));
        let preds = Array3::from_shape_fn((b, f, t), |_| rng.random_range(-1.0..1.0));
        let lengths = [6, 2, 4];
        let qmap = QMap {
            scale: 1.7,
            offset: 0.3,
        };
        let (want, grad) =
            guided_objective(targets.view(), preds.view(), &lengths, &l, 0.5, qmap).unwrap();

        let dev = Device::Cpu;
        let to_t = |a: &Array3<f64>| Tensor::from_iter(a.iter().copied(), &dev).unwrap().reshape((b, f, t)).unwrap();
        let p = Var::from_tensor(&to_t(&preds)).unwrap();
        let (loss, got) = guided_loss_tensor(&to_t(&targets), p.as_tensor(), &lengths, &l, 0.5, qmap).unwrap();
        assert!((got.total - want.total).abs() < 1e-12);
        assert!((got.hinge - want.hinge).abs() < 1e-12);
        assert!((got.q_gen_mean - want.q_gen_mean).abs() < 1e-12);
        let g = loss.backward().unwrap();
        let g = g.get(p.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in g.iter().zip(grad.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
