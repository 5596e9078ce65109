//! Differentiable forward models, photon-noise synthesis and the per-datum
//! Gaussian likelihood with variance approximated by the measurement.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_nonnegative, Axis, Grid, Shape};
use crate::rng::{Purpose, Streams};

/// A map from a nonnegative field to a vector of noiseless data.
pub trait ForwardModel: Send + Sync {
    fn output_len(&self, shape: &Shape) -> usize;

    /// Noiseless data. Fails on any negative or non-finite input.
    fn apply(&self, x: &Grid) -> Result<Vec<f64>>;

    /// Pulls a data-space cotangent back to a field-shaped gradient at `x`.
    fn vjp(&self, x: &Grid, cotangent: &[f64]) -> Result<Grid>;

    fn spec(&self) -> ForwardModelSpec;
}

/// Serializable description of a forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForwardModelSpec {
    Identity,
    LinearProjection {
        axis: Axis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    BeerLambert {
        axis: Axis,
        i0: f64,
    },
}

impl ForwardModelSpec {
    pub fn build(&self) -> Result<Box<dyn ForwardModel>> {
        Ok(match self {
            ForwardModelSpec::Identity => Box::new(IdentityModel),
            ForwardModelSpec::LinearProjection { axis, weights } => Box::new(LinearProjection {
                axis: *axis,
                weights: weights.clone(),
            }),
            ForwardModelSpec::BeerLambert { axis, i0 } => Box::new(BeerLambert::new(*axis, *i0)?),
        })
    }
}

fn check_input(x: &Grid) -> Result<()> {
    check_nonnegative(x.values())
}

fn check_cotangent(expected: usize, cotangent: &[f64]) -> Result<()> {
    if cotangent.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "cotangent has {} entries, forward model produces {expected}",
            cotangent.len()
        )));
    }
    Ok(())
}

/// `y = x` flattened in storage order.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl ForwardModel for IdentityModel {
    fn output_len(&self, shape: &Shape) -> usize {
        shape.len()
    }

    fn apply(&self, x: &Grid) -> Result<Vec<f64>> {
        check_input(x)?;
        Ok(x.values().to_vec())
    }

    fn vjp(&self, x: &Grid, cotangent: &[f64]) -> Result<Grid> {
        check_input(x)?;
        check_cotangent(x.len(), cotangent)?;
        x.with_values(cotangent.to_vec())
    }

    fn spec(&self) -> ForwardModelSpec {
        ForwardModelSpec::Identity
    }
}

/// Number of axis-aligned rays along `axis`, one per channel per pixel.
pub fn ray_count(shape: &Shape, axis: Axis) -> usize {
    let d = shape.dims;
    let pixels = match axis {
        Axis::Z => d.ny * d.nx,
        Axis::Y => d.nz * d.nx,
        Axis::X => d.nz * d.ny,
    };
    pixels * shape.n_channels()
}

/// Calls `f(ray, voxel_value_index)` for every element. Rays are ordered by
/// the two remaining axes in `z, y, x` order, channel-minor.
fn for_each_ray_element(shape: &Shape, axis: Axis, mut f: impl FnMut(usize, usize)) {
    let d = shape.dims;
    let nc = shape.n_channels();
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let pixel = match axis {
                    Axis::Z => y * d.nx + x,
                    Axis::Y => z * d.nx + x,
                    Axis::X => z * d.ny + y,
                };
                for c in 0..nc {
                    f(pixel * nc + c, shape.index(z, y, x, c));
                }
            }
        }
    }
}

fn path_sums(x: &Grid, axis: Axis) -> Vec<f64> {
    let mut sums = vec![0.0; ray_count(x.shape(), axis)];
    let v = x.values();
    for_each_ray_element(x.shape(), axis, |r, i| sums[r] += v[i]);
    sums
}

/// `y_r = w_r * sum_{path r} x`, a tomographic line-integral operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    pub axis: Axis,
    pub weights: Option<Vec<f64>>,
}

impl LinearProjection {
    fn weight_check(&self, n: usize) -> Result<()> {
        match &self.weights {
            Some(w) if w.len() != n => Err(Error::ShapeMismatch(format!(
                "{} ray weights for {n} rays",
                w.len()
            ))),
            _ => Ok(()),
        }
    }
}

impl ForwardModel for LinearProjection {
    fn output_len(&self, shape: &Shape) -> usize {
        ray_count(shape, self.axis)
    }

    fn apply(&self, x: &Grid) -> Result<Vec<f64>> {
        check_input(x)?;
        let mut sums = path_sums(x, self.axis);
        self.weight_check(sums.len())?;
        if let Some(w) = &self.weights {
            sums.iter_mut().zip(w).for_each(|(s, w)| *s *= w);
        }
        Ok(sums)
    }

    fn vjp(&self, x: &Grid, cotangent: &[f64]) -> Result<Grid> {
        check_input(x)?;
        let n = self.output_len(x.shape());
        check_cotangent(n, cotangent)?;
        self.weight_check(n)?;
        let mut g = vec![0.0; x.len()];
        for_each_ray_element(x.shape(), self.axis, |r, i| {
            let w = self.weights.as_ref().map_or(1.0, |w| w[r]);
            g[i] = w * cotangent[r];
        });
        x.with_values(g)
    }

    fn spec(&self) -> ForwardModelSpec {
        ForwardModelSpec::LinearProjection {
            axis: self.axis,
            weights: self.weights.clone(),
        }
    }
}

/// `y_r = I0 * exp(-sum_{path r} x)`: transmitted intensity along each ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeerLambert {
    pub axis: Axis,
    pub i0: f64,
}

impl BeerLambert {
    pub fn new(axis: Axis, i0: f64) -> Result<Self> {
        if !(i0 > 0.0 && i0.is_finite()) {
            return Err(Error::InvalidArgument(format!("I0 must be positive, got {i0}")));
        }
        Ok(Self { axis, i0 })
    }
}

impl ForwardModel for BeerLambert {
    fn output_len(&self, shape: &Shape) -> usize {
        ray_count(shape, self.axis)
    }

    fn apply(&self, x: &Grid) -> Result<Vec<f64>> {
        check_input(x)?;
        Ok(path_sums(x, self.axis)
            .into_iter()
            .map(|s| self.i0 * (-s).exp())
            .collect())
    }

    fn vjp(&self, x: &Grid, cotangent: &[f64]) -> Result<Grid> {
        let y = self.apply(x)?;
        check_cotangent(y.len(), cotangent)?;
        let mut g = vec![0.0; x.len()];
        for_each_ray_element(x.shape(), self.axis, |r, i| g[i] = -y[r] * cotangent[r]);
        x.with_values(g)
    }

    fn spec(&self) -> ForwardModelSpec {
        ForwardModelSpec::BeerLambert {
            axis: self.axis,
            i0: self.i0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `y = F + N(0, F)`.
    #[default]
    Gaussian,
    /// `y ~ Poisson(F)`; for robustness experiments.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOptions {
    pub y_min: f64,
    #[serde(default)]
    pub model: NoiseModel,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        Self {
            y_min: 1e-3,
            model: NoiseModel::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementMeta {
    pub forward_model: ForwardModelSpec,
    pub seed: u64,
    pub y_min: f64,
    pub noise: NoiseModel,
}

/// Noisy data in photo-electron units together with how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub meta: MeasurementMeta,
    pub values: Vec<f64>,
}

/// Photon noise with variance equal to the clean signal, floored at `y_min`.
///
/// Draws come from stream `(Measurement, 0)` of `seed`, one per datum in order.
pub fn add_photon_noise(clean: &[f64], seed: u64, opts: &NoiseOptions) -> Result<Vec<f64>> {
    if !(opts.y_min > 0.0 && opts.y_min.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "y_min must be positive, got {}",
            opts.y_min
        )));
    }
    check_nonnegative(clean)?;
    let mut rng = Streams::new(seed).stream(Purpose::Measurement, 0);
    let noisy = clean.iter().map(|&c| match opts.model {
        NoiseModel::Gaussian => {
            let eta: f64 = rng.sample(StandardNormal);
            c + c.sqrt() * eta
        }
        NoiseModel::Poisson if c > 0.0 => Poisson::new(c)
            .map(|p| p.sample(&mut rng))
            .unwrap_or(c),
        NoiseModel::Poisson => 0.0,
    });
    Ok(noisy.map(|y| y.max(opts.y_min)).collect())
}

/// Clean data through `fm`, then photon noise.
pub fn measure(
    x: &Grid,
    fm: &dyn ForwardModel,
    seed: u64,
    opts: &NoiseOptions,
) -> Result<Measurement> {
    let clean = fm.apply(x)?;
    let values = add_photon_noise(&clean, seed, opts)?;
    Ok(Measurement {
        meta: MeasurementMeta {
            forward_model: fm.spec(),
            seed,
            y_min: opts.y_min,
            noise: opts.model,
        },
        values,
    })
}

pub fn check_measurement(y: &[f64]) -> Result<()> {
    for (index, &value) in y.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveMeasurement { index, value });
        }
    }
    Ok(())
}

/// `sum_k [ -(y_k - F_k(x))^2 / (2 y_k) - log(2 pi y_k) / 2 ]`.
pub fn log_likelihood(y: &[f64], x: &Grid, fm: &dyn ForwardModel) -> Result<f64> {
    check_measurement(y)?;
    let f = fm.apply(x)?;
    check_cotangent(f.len(), y)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(y.iter()
        .zip(&f)
        .map(|(&yk, &fk)| -(yk - fk) * (yk - fk) / (2.0 * yk) - 0.5 * (two_pi * yk).ln())
        .sum())
}

/// Gradient of [`log_likelihood`] with respect to `x`.
pub fn log_likelihood_grad(y: &[f64], x: &Grid, fm: &dyn ForwardModel) -> Result<Grid> {
    check_measurement(y)?;
    let f = fm.apply(x)?;
    check_cotangent(f.len(), y)?;
    let r: Vec<f64> = y.iter().zip(&f).map(|(yk, fk)| (yk - fk) / yk).collect();
    fm.vjp(x, &r)
}
