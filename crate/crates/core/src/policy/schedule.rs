//! Linear-beta DDPM noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};

/// Reverse-step variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    /// `sigma_k^2 = beta_k` at every step.
    Beta,
    /// `sigma_k^2 = beta_k (1 - ab_{k-1}) / (1 - ab_k)` for `k >= 2` and
    /// `sigma_1^2 = beta_1`, keeping every step a proper density.
    #[default]
    Posterior,
}

/// Noise schedule over `k_total` diffusion steps.
///
/// Arrays are indexed by step `k` in `1..=k_total` via the accessor methods;
/// `alpha_bar(0)` is 1 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmSchedule {
    k_total: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    variance: Variance,
}

impl DdpmSchedule {
    /// Betas spaced linearly from `beta_min` (k = 1) to `beta_max` (k = K).
    pub fn linear(k_total: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if k_total < 2 {
            return Err(NavError::Config(format!("need at least 2 diffusion steps, got {k_total}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(NavError::Config(format!(
                "beta bounds must satisfy 0 < min <= max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<f64> = (0..k_total)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (k_total - 1) as f64)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(k_total);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            k_total,
            betas,
            alphas,
            alpha_bars,
            variance: Variance::Beta,
        })
    }

    pub fn with_variance(mut self, variance: Variance) -> Self {
        self.variance = variance;
        self
    }

    pub fn variance(&self) -> Variance {
        self.variance
    }

    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// Sampling standard deviation at step `k` under the configured
    /// [`Variance`].
    pub fn sigma(&self, k: usize) -> f64 {
        match self.variance {
            Variance::Posterior if k >= 2 => {
                (self.beta(k) * (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k))).sqrt()
            }
            _ => self.beta(k).sqrt(),
        }
    }

    /// Coefficients `(c1, c2)` with `mu = c1 * (tau_k - c2 * eps_hat)`.
    pub fn mean_coefficients(&self, k: usize) -> (f64, f64) {
        let c1 = 1.0 / self.alpha(k).sqrt();
        let c2 = self.beta(k) / (1.0 - self.alpha_bar(k)).sqrt();
        (c1, c2)
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_total {
            return Err(NavError::Usage(format!(
                "diffusion step {k} outside 1..={}",
                self.k_total
            )));
        }
        Ok(())
    }

    /// Forward noising `sqrt(ab_k) tau0 + sqrt(1 - ab_k) noise`.
    pub fn q_sample(&self, tau0: &[f64], k: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        if tau0.len() != noise.len() {
            return Err(NavError::Usage(format!(
                "noise has {} values for a {}-value trajectory",
                noise.len(),
                tau0.len()
            )));
        }
        let ab = self.alpha_bar(k);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(tau0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule_closed_form() {
        let s = DdpmSchedule::linear(10, 0.1, 0.1).unwrap();
        for k in 1..=10 {
            assert!((s.alpha(k) - 0.9).abs() < 1e-15);
            assert!((s.alpha_bar(k) - 0.9f64.powi(k as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_bar_matches_direct_product() {
        let s = DdpmSchedule::linear(10, 1e-4, 0.02).unwrap();
        // independent product over the explicitly listed betas
        let mut prod = 1.0;
        for i in 0..10 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 9.0);
        }
        assert!((s.alpha_bar(10) - prod).abs() < 1e-12);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = DdpmSchedule::linear(10, 1e-3, 0.5).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        for k in 1..=10 {
            assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            assert!(s.beta(k) > 0.0 && s.beta(k) < 1.0);
            assert!(s.sigma(k) > 0.0);
        }
    }

    #[test]
    fn posterior_variance_closed_form() {
        let s = DdpmSchedule::linear(3, 0.1, 0.3).unwrap().with_variance(Variance::Posterior);
        // betas 0.1, 0.2, 0.3: ab = 0.9, 0.72, 0.504
        assert!((s.sigma(1) - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma(2).powi(2) - 0.2 * 0.1 / 0.28).abs() < 1e-15);
        assert!((s.sigma(3).powi(2) - 0.3 * 0.28 / 0.496).abs() < 1e-15);
        let b = DdpmSchedule::linear(3, 0.1, 0.3).unwrap();
        assert!((b.sigma(3).powi(2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(DdpmSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(DdpmSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(DdpmSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(DdpmSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn q_sample_zero_noise_and_range() {
        let s = DdpmSchedule::linear(10, 1e-3, 0.5).unwrap();
        let tau = vec![1.0, -2.0];
        let out = s.q_sample(&tau, 4, &[0.0, 0.0]).unwrap();
        let a = s.alpha_bar(4).sqrt();
        assert_eq!(out, vec![a, -2.0 * a]);
        assert!(s.q_sample(&tau, 0, &[0.0, 0.0]).is_err());
        assert!(s.q_sample(&tau, 11, &[0.0, 0.0]).is_err());
    }
}
