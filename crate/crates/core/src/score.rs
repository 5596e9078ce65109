//! Latent-space gradients: the prior score from a denoiser and the data term
//! evaluated at the denoised estimate.

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::forward::{check_measurement, ForwardModel};
use crate::grid::{Grid, ScoreTerm};
use crate::latent::from_latent;

/// `(D(rho_noisy, sigma) - rho_noisy) / sigma^2`.
pub fn prior_score(denoiser: &dyn Denoiser, rho_noisy: &Grid, sigma: f64) -> Result<ScoreTerm> {
    let denoised = denoiser.denoise(rho_noisy, sigma)?;
    prior_score_from(rho_noisy, &denoised, sigma)
}

/// Prior score from an already computed denoiser output.
pub fn prior_score_from(rho_noisy: &Grid, denoised: &Grid, sigma: f64) -> Result<ScoreTerm> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    rho_noisy.shape().ensure_same(denoised.shape())?;
    let inv = 1.0 / (sigma * sigma);
    let values = denoised
        .values()
        .iter()
        .zip(rho_noisy.values())
        .map(|(d, r)| (d - r) * inv)
        .collect();
    rho_noisy.with_values(values)
}

/// Data-term gradient together with the residual it was computed from.
#[derive(Debug, Clone)]
pub struct LikelihoodTerm {
    pub grad: ScoreTerm,
    /// `||y - F(exp(rho_hat))||_2`.
    pub residual_norm: f64,
}

/// Gradient of `log p(y | rho_hat(rho_noisy))` with respect to `rho_noisy`.
///
/// The residual `(y - F(exp(rho_hat))) / y` is pulled back through the
/// forward model, multiplied by `exp(rho_hat)` and pulled back through the
/// denoiser.
pub fn likelihood_grad(
    denoiser: &dyn Denoiser,
    fm: &dyn ForwardModel,
    y: &[f64],
    rho_noisy: &Grid,
    sigma: f64,
) -> Result<ScoreTerm> {
    let denoised = denoiser.denoise(rho_noisy, sigma)?;
    Ok(likelihood_term(denoiser, fm, y, rho_noisy, &denoised, sigma)?.grad)
}

/// [`likelihood_grad`] reusing a denoiser output computed by the caller.
pub fn likelihood_term(
    denoiser: &dyn Denoiser,
    fm: &dyn ForwardModel,
    y: &[f64],
    rho_noisy: &Grid,
    denoised: &Grid,
    sigma: f64,
) -> Result<LikelihoodTerm> {
    check_measurement(y)?;
    let x_hat = from_latent(denoised)?.into_grid();
    let predicted = fm.apply(&x_hat)?;
    if predicted.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "measurement has {} data, forward model produces {}",
            y.len(),
            predicted.len()
        )));
    }
    if let Some(index) = predicted.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "forward model output {index} is {}",
            predicted[index]
        )));
    }
    let mut residual_sq = 0.0;
    let weighted: Vec<f64> = y
        .iter()
        .zip(&predicted)
        .map(|(yk, fk)| {
            residual_sq += (yk - fk) * (yk - fk);
            (yk - fk) / yk
        })
        .collect();
    let grad_x = fm.vjp(&x_hat, &weighted)?;
    let grad_rho_hat: Vec<f64> = grad_x
        .values()
        .iter()
        .zip(x_hat.values())
        .map(|(g, x)| g * x)
        .collect();
    let grad_rho_hat = denoised.with_values(grad_rho_hat)?;
    let grad = denoiser.vjp(rho_noisy, sigma, &grad_rho_hat)?;
    grad.ensure_finite()?;
    Ok(LikelihoodTerm {
        grad,
        residual_norm: residual_sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{GaussianLatentPrior, IdentityDenoiser};
    use crate::forward::IdentityModel;
    use crate::grid::{Dims, Shape};

    fn scalar(v: f64) -> Grid {
        Grid::new(Shape::scalar_channel(Dims::new(1, 1, 1)), vec![v]).unwrap()
    }

    struct Constant(f64);

    impl Denoiser for Constant {
        fn denoise(&self, rho: &Grid, _sigma: f64) -> Result<Grid> {
            Ok(rho.map(|_| self.0))
        }
        fn vjp(&self, rho: &Grid, _sigma: f64, _c: &Grid) -> Result<Grid> {
            Ok(Grid::zeros(rho.shape().clone()))
        }
    }

    #[test]
    fn fixed_point_has_zero_score() {
        let s = prior_score(&IdentityDenoiser, &scalar(1.3), 0.2).unwrap();
        assert_eq!(s.values()[0], 0.0);
    }

    #[test]
    fn score_arithmetic() {
        let s = prior_score(&Constant(3.0), &scalar(1.0), 0.5f64.sqrt()).unwrap();
        assert!((s.values()[0] - 4.0).abs() < 1e-12);
        assert!(prior_score(&Constant(3.0), &scalar(1.0), 0.0).is_err());
    }

    #[test]
    fn gaussian_prior_score_is_marginal_score() {
        let p = GaussianLatentPrior::new(0.0, 1.0).unwrap();
        for r in [-3.0, -0.5, 0.0, 2.0] {
            for sigma in [0.1, 1.0, 10.0] {
                let s = prior_score(&p, &scalar(r), sigma).unwrap().values()[0];
                assert!((s + r / (1.0 + sigma * sigma)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let y = [1.0f64.exp()];
        let g = likelihood_grad(&IdentityDenoiser, &IdentityModel, &y, &scalar(1.0), 0.3).unwrap();
        assert_eq!(g.values()[0], 0.0);
    }

    #[test]
    fn scalar_identity_substitution() {
        // (y - e^0)/y * e^0 with y = 2
        let g = likelihood_grad(&IdentityDenoiser, &IdentityModel, &[2.0], &scalar(0.0), 1.0).unwrap();
        assert!((g.values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measurement_must_be_positive() {
        assert!(matches!(
            likelihood_grad(&IdentityDenoiser, &IdentityModel, &[0.0], &scalar(0.0), 1.0),
            Err(Error::NonPositiveMeasurement { .. })
        ));
    }
}
