//! Denoisers approximating `E[log(x + eps) | noisy latent]`.

mod analytic;
mod conv;
mod neural;
mod train;

pub use analytic::{GaussianLatentPrior, MixtureComponent, MixtureLatentPrior};
pub use neural::{AdamConfig, AdamState, ModelMeta, NeuralDenoiser, ARCHITECTURE, HIDDEN_CHANNELS};
#[cfg(test)]
pub(crate) use neural::tests::meta as neural_test_meta;
pub use train::{
    mse_at_sigma, smooth, train, validation_loss, TrainData, TrainOptions, TrainReport,
    ValidationPoint,
};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Maps a noisy latent and its noise level to the expected clean latent.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, rho_noisy: &Grid, sigma: f64) -> Result<Grid>;

    /// `cotangent^T * dD/d(rho_noisy)`, evaluated at `rho_noisy`.
    fn vjp(&self, rho_noisy: &Grid, sigma: f64, cotangent: &Grid) -> Result<Grid>;

    /// Channels the denoiser was built for, if it is channel-specific.
    fn channels(&self) -> Option<&[String]> {
        None
    }

    /// Latent offset the denoiser was trained with, if any.
    fn eps(&self) -> Option<f64> {
        None
    }
}

/// `D(rho) = rho`: zero prior score, a pure noise walk under Langevin updates.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, rho_noisy: &Grid, sigma: f64) -> Result<Grid> {
        check_sigma(sigma)?;
        Ok(rho_noisy.clone())
    }

    fn vjp(&self, rho_noisy: &Grid, sigma: f64, cotangent: &Grid) -> Result<Grid> {
        check_sigma(sigma)?;
        rho_noisy.shape().ensure_same(cotangent.shape())?;
        Ok(cotangent.clone())
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "noise level must be positive and finite, got {sigma}"
        )))
    }
}
