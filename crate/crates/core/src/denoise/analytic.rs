//! Closed-form posterior means for element-wise independent latent priors.
//!
//! With `rho ~ prior` and `rho_noisy = rho + N(0, sigma^2)`, these return
//! `E[rho | rho_noisy]` and its exact derivative.

use serde::{Deserialize, Serialize};

use super::{check_sigma, Denoiser};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// `rho ~ N(mean, std^2)` independently per element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianLatentPrior {
    pub mean: f64,
    pub std: f64,
}

impl GaussianLatentPrior {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let p = Self { mean, std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian prior needs finite mean and positive std, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn posterior_mean(&self, rho_noisy: f64, sigma: f64) -> f64 {
        let s2 = self.std * self.std;
        let n2 = sigma * sigma;
        (s2 * rho_noisy + n2 * self.mean) / (s2 + n2)
    }

    pub fn posterior_mean_derivative(&self, sigma: f64) -> f64 {
        let s2 = self.std * self.std;
        s2 / (s2 + sigma * sigma)
    }
}

impl Denoiser for GaussianLatentPrior {
    fn denoise(&self, rho_noisy: &Grid, sigma: f64) -> Result<Grid> {
        check_sigma(sigma)?;
        Ok(rho_noisy.map(|r| self.posterior_mean(r, sigma)))
    }

    fn vjp(&self, rho_noisy: &Grid, sigma: f64, cotangent: &Grid) -> Result<Grid> {
        check_sigma(sigma)?;
        rho_noisy.shape().ensure_same(cotangent.shape())?;
        let d = self.posterior_mean_derivative(sigma);
        Ok(cotangent.map(|c| c * d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Element-wise Gaussian mixture prior on the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureLatentPrior {
    pub components: Vec<MixtureComponent>,
}

impl MixtureLatentPrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let p = Self { components };
        p.validate()?;
        Ok(p)
    }

    /// The two-bump test prior `{(0.5, -2, 0.3), (0.5, 2, 0.3)}`.
    pub fn symmetric_pair(offset: f64, std: f64) -> Self {
        Self {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: -offset,
                    std,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: offset,
                    std,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight > 0.0 && c.std > 0.0 && c.std.is_finite() && c.mean.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid mixture component {c:?}")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Posterior mean and its derivative at a single noisy value.
    pub fn posterior_mean_and_derivative(&self, rho_noisy: f64, sigma: f64) -> (f64, f64) {
        let n2 = sigma * sigma;
        // Per component: log responsibility (unnormalised), posterior mean,
        // d(mean)/d(rho_noisy), d(log marginal)/d(rho_noisy).
        let k = self.components.len();
        let mut stack = [0.0f64; 8];
        let mut heap = Vec::new();
        let log_r: &mut [f64] = if k <= stack.len() {
            &mut stack[..k]
        } else {
            heap.resize(k, 0.0);
            &mut heap
        };
        let mut max_lr = f64::NEG_INFINITY;
        for (lr, c) in log_r.iter_mut().zip(&self.components) {
            let v = c.std * c.std + n2;
            let d = rho_noisy - c.mean;
            *lr = c.weight.ln() - 0.5 * v.ln() - 0.5 * d * d / v;
            max_lr = max_lr.max(*lr);
        }
        let mut z = 0.0;
        for lr in log_r.iter_mut() {
            *lr = (*lr - max_lr).exp();
            z += *lr;
        }
        let (mut mean, mut dmean, mut dlog) = (0.0, 0.0, 0.0);
        let mut m_dlog = 0.0;
        for (r, c) in log_r.iter().zip(&self.components) {
            let r = r / z;
            let s2 = c.std * c.std;
            let v = s2 + n2;
            let m = (s2 * rho_noisy + n2 * c.mean) / v;
            let g = -(rho_noisy - c.mean) / v;
            mean += r * m;
            dmean += r * s2 / v;
            dlog += r * g;
            m_dlog += r * m * g;
        }
        // d/d rho of sum_j r_j m_j = sum_j r_j m_j' + sum_j r_j m_j (g_j - g_bar)
        (mean, dmean + m_dlog - mean * dlog)
    }
}

impl Denoiser for MixtureLatentPrior {
    fn denoise(&self, rho_noisy: &Grid, sigma: f64) -> Result<Grid> {
        check_sigma(sigma)?;
        Ok(rho_noisy.map(|r| self.posterior_mean_and_derivative(r, sigma).0))
    }

    fn vjp(&self, rho_noisy: &Grid, sigma: f64, cotangent: &Grid) -> Result<Grid> {
        check_sigma(sigma)?;
        rho_noisy.shape().ensure_same(cotangent.shape())?;
        let values = rho_noisy
            .values()
            .iter()
            .zip(cotangent.values())
            .map(|(&r, &c)| c * self.posterior_mean_and_derivative(r, sigma).1)
            .collect();
        rho_noisy.with_values(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, Shape};

    fn grid(v: Vec<f64>) -> Grid {
        Grid::new(Shape::scalar_channel(Dims::new(1, 1, v.len())), v).unwrap()
    }

    #[test]
    fn gaussian_examples() {
        let p = GaussianLatentPrior::new(0.0, 1.0).unwrap();
        let out = p.denoise(&grid(vec![2.0]), 1.0).unwrap();
        assert!((out.values()[0] - 1.0).abs() < 1e-15);
        let near = p.denoise(&grid(vec![2.0]), 1e-9).unwrap();
        assert!((near.values()[0] - 2.0).abs() < 1e-15);
        let j = p.vjp(&grid(vec![0.3]), 1.0, &grid(vec![1.0])).unwrap();
        assert_eq!(j.values()[0], 0.5);
    }

    #[test]
    fn sigma_must_be_positive() {
        let p = GaussianLatentPrior::new(0.0, 1.0).unwrap();
        assert!(p.denoise(&grid(vec![0.0]), 0.0).is_err());
        assert!(p.denoise(&grid(vec![0.0]), f64::NAN).is_err());
    }

    #[test]
    fn symmetric_mixture_at_zero() {
        let p = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
        let out = p.denoise(&grid(vec![0.0]), 0.5).unwrap();
        assert!(out.values()[0].abs() < 1e-15);
    }

    #[test]
    fn mixture_vjp_zero_cotangent() {
        let p = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
        let j = p
            .vjp(&grid(vec![-3.0, 0.0, 3.0]), 0.5, &grid(vec![0.0; 3]))
            .unwrap();
        assert!(j.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixture_weights_validated() {
        let mut p = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
        p.components[0].weight = 0.4;
        assert!(p.validate().is_err());
        assert!(MixtureLatentPrior::new(vec![]).is_err());
    }

    #[test]
    fn one_component_mixture_is_gaussian() {
        let m = MixtureLatentPrior::new(vec![MixtureComponent {
            weight: 1.0,
            mean: 0.7,
            std: 1.3,
        }])
        .unwrap();
        let g = GaussianLatentPrior::new(0.7, 1.3).unwrap();
        for r in [-4.0, -0.2, 0.0, 2.5] {
            let (mm, dm) = m.posterior_mean_and_derivative(r, 0.8);
            assert!((mm - g.posterior_mean(r, 0.8)).abs() < 1e-14);
            assert!((dm - g.posterior_mean_derivative(0.8)).abs() < 1e-14);
        }
    }
}
