use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Linear DDPM variance schedule. Step `k` runs `1..=K`; vectors are indexed `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Default beta range stretched by `DEFAULT_STEPS / steps`, so that shortened
/// schedules still end near pure noise.
pub fn scaled_beta_range(steps: usize) -> (f64, f64) {
    let s = DEFAULT_STEPS as f64 / steps.max(1) as f64;
    ((DEFAULT_BETA_START * s).min(0.5), (DEFAULT_BETA_END * s).min(0.999))
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(format!(
                "betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(invalid("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.steps() {
            return Err(invalid(format!("step {k} outside [1, {}]", self.steps())));
        }
        Ok(k - 1)
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }

    /// `ᾱ_{k-1}` with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, k: usize) -> f64 {
        if k <= 1 {
            1.0
        } else {
            self.alpha_bars[k - 2]
        }
    }

    /// Fixed posterior variance `β̃_k = (1 - ᾱ_{k-1}) / (1 - ᾱ_k) · β_k`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(k)) / (1.0 - self.alpha_bar(k)) * self.beta(k)
    }

    /// Coefficients `(c0, ck)` of the posterior mean `c0·τ̂_0 + ck·τ_k`.
    pub fn posterior_mean_coefs(&self, k: usize) -> (f64, f64) {
        let ab = self.alpha_bar(k);
        let ab_prev = self.alpha_bar_prev(k);
        let c0 = ab_prev.sqrt() * self.beta(k) / (1.0 - ab);
        let ck = self.alpha(k).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ck)
    }

    /// `τ_k = √ᾱ_k τ_0 + √(1-ᾱ_k) ε`, elementwise.
    pub fn forward_noise(&self, tau0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let idx = self.check(k)?;
        if tau0.len() != eps.len() {
            return Err(invalid(format!(
                "trajectory has {} values, noise has {}",
                tau0.len(),
                eps.len()
            )));
        }
        let (a, b) = (self.alpha_bars[idx].sqrt(), (1.0 - self.alpha_bars[idx]).sqrt());
        Ok(tau0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    pub(crate) fn validate_step(&self, k: usize) -> Result<()> {
        self.check(k).map(|_| ())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_step_products() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
        for (got, want) in s.alpha_bars.iter().zip([0.9, 0.72, 0.504]) {
            assert!((got - want).abs() < 1e-12);
        }
        let one = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(one.alpha_bars, vec![0.5]);
    }

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = NoiseSchedule::default();
        let direct: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-15);
        assert!(s.alpha_bar(1000) > 3e-5 && s.alpha_bar(1000) < 5e-5);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn short_schedules_still_reach_noise() {
        for steps in [20, 50, 100] {
            let (lo, hi) = scaled_beta_range(steps);
            let s = NoiseSchedule::linear(steps, lo, hi).unwrap();
            assert!(s.alpha_bar(steps) < 1e-4, "K={steps}: {}", s.alpha_bar(steps));
        }
        assert_eq!(scaled_beta_range(1000), (1e-4, 0.02));
    }

    #[test]
    fn invalid_schedules() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_closed_form() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
        let x = s.forward_noise(&[1.0], 2, &[1.0]).unwrap()[0];
        assert!((x - (0.72f64.sqrt() + 0.28f64.sqrt())).abs() < 1e-12);
        assert!((x - 1.3777).abs() < 1e-4);
        assert_eq!(s.forward_noise(&[2.0], 1, &[0.0]).unwrap()[0], 0.9f64.sqrt() * 2.0);
        assert_eq!(s.forward_noise(&[0.0], 3, &[1.5]).unwrap()[0], (1.0 - 0.504f64).sqrt() * 1.5);
        assert!(s.forward_noise(&[0.0], 4, &[0.0]).is_err());
        assert!(s.forward_noise(&[0.0], 0, &[0.0]).is_err());
        assert!(s.forward_noise(&[0.0, 1.0], 1, &[0.0]).is_err());
    }
}
