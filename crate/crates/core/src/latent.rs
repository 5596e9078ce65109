//! Bridge between the nonnegative physical domain and the real latent domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_nonnegative, Field, Grid, LatentField};

/// Default latent offset, `exp(-10)`.
pub const DEFAULT_EPS: f64 = 4.539_992_976_248_485_4e-5;

/// Largest latent value whose exponential is finite.
pub const MAX_LATENT: f64 = 709.782_712_893_384;
/// Smallest latent value whose exponential is a normal positive float.
pub const MIN_LATENT: f64 = -708.396_418_532_264_1;

pub fn default_eps() -> f64 {
    (-10.0f64).exp()
}

/// `rho = log(x + eps)` element-wise.
pub fn to_latent(x: &Field, eps: f64) -> Result<LatentField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    // Field already guarantees this; re-checked because datasets are read from disk.
    check_nonnegative(x.values())?;
    Ok(x.as_grid().map(|v| (v + eps).ln()))
}

/// `x = exp(rho)` element-wise. The output is strictly positive.
pub fn from_latent(rho: &LatentField) -> Result<Field> {
    for (index, &value) in rho.values().iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        if !(MIN_LATENT..=MAX_LATENT).contains(&value) {
            return Err(Error::Overflow { index, value });
        }
    }
    Field::try_from(rho.map(f64::exp))
}

/// Per-channel multiplicative factors applied before training and undone after sampling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleSpec {
    factors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleDirection {
    Forward,
    Inverse,
}

impl ScaleSpec {
    pub fn new(factors: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let factors: BTreeMap<String, f64> = factors.into_iter().collect();
        for (name, &f) in &factors {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "scale factor for `{name}` must be positive, got {f}"
                )));
            }
        }
        Ok(Self { factors })
    }

    pub fn identity(channels: &[String]) -> Self {
        Self {
            factors: channels.iter().map(|c| (c.clone(), 1.0)).collect(),
        }
    }

    /// Factors that send each channel's 95th percentile of positive values to 1.
    ///
    /// A channel with no positive values gets factor 1.
    pub fn from_percentile<'a>(
        channels: &[String],
        fields: impl IntoIterator<Item = &'a Field>,
        q: f64,
    ) -> Result<Self> {
        let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
        for f in fields {
            if f.shape().channels != channels {
                return Err(Error::ShapeMismatch(format!(
                    "dataset channel lists differ: {:?} vs {:?}",
                    f.shape().channels,
                    channels
                )));
            }
            for (c, bucket) in per_channel.iter_mut().enumerate() {
                bucket.extend(f.as_grid().channel_values(c).filter(|v| *v > 0.0));
            }
        }
        let factors = channels
            .iter()
            .zip(per_channel)
            .map(|(name, mut vals)| {
                let p = percentile(&mut vals, q);
                let f = if p > 0.0 { 1.0 / p } else { 1.0 };
                (name.clone(), f)
            })
            .collect();
        Ok(Self { factors })
    }

    pub fn factor(&self, channel: &str) -> Result<f64> {
        self.factors
            .get(channel)
            .copied()
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))
    }

    pub fn factors(&self) -> &BTreeMap<String, f64> {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.values().all(|&f| f == 1.0)
    }
}

/// Nearest-rank percentile, `q` in `[0, 1]`. Sorts `vals` in place; 0 if empty.
pub fn percentile(vals: &mut [f64], q: f64) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let rank = (q * vals.len() as f64).ceil() as usize;
    vals[rank.clamp(1, vals.len()) - 1]
}

/// Per-channel multiply (forward) or divide (inverse).
pub fn apply_scale(x: &Field, scale: &ScaleSpec, direction: ScaleDirection) -> Result<Field> {
    let factors = x
        .shape()
        .channels
        .iter()
        .map(|c| scale.factor(c))
        .collect::<Result<Vec<_>>>()?;
    let nc = factors.len();
    let values = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| match direction {
            ScaleDirection::Forward => v * factors[i % nc],
            ScaleDirection::Inverse => v / factors[i % nc],
        })
        .collect();
    Field::try_from(Grid::new(x.shape().clone(), values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, Shape};

    fn field(values: Vec<f64>) -> Field {
        let n = values.len();
        Field::new(Shape::scalar_channel(Dims::new(1, 1, n)), values).unwrap()
    }

    #[test]
    fn eps_constant_is_exp_minus_ten() {
        assert_eq!(DEFAULT_EPS, default_eps());
    }

    #[test]
    fn zero_field_maps_to_minus_ten() {
        let rho = to_latent(&field(vec![0.0; 8]), default_eps()).unwrap();
        assert!(rho.values().iter().all(|&v| (v + 10.0).abs() < 1e-15));
    }

    #[test]
    fn complement_of_eps_maps_to_zero() {
        let eps = default_eps();
        let rho = to_latent(&field(vec![1.0 - eps]), eps).unwrap();
        assert!(rho.values()[0].abs() < 1e-15);
    }

    #[test]
    fn from_latent_examples() {
        let rho = Grid::new(Shape::scalar_channel(Dims::new(1, 1, 2)), vec![0.0, -10.0]).unwrap();
        let x = from_latent(&rho).unwrap();
        assert_eq!(x.values()[0], 1.0);
        assert!((x.values()[1] - 4.539_992_976_248_485_4e-5).abs() < 1e-18);
    }

    #[test]
    fn from_latent_rejects_out_of_range() {
        let s = Shape::scalar_channel(Dims::new(1, 1, 1));
        let big = Grid::new(s.clone(), vec![710.0]).unwrap();
        assert!(matches!(from_latent(&big), Err(Error::Overflow { .. })));
        let small = Grid::new(s.clone(), vec![-720.0]).unwrap();
        assert!(matches!(from_latent(&small), Err(Error::Overflow { .. })));
        let nan = Grid::new(s, vec![f64::NAN]).unwrap();
        assert!(matches!(from_latent(&nan), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bad_eps_rejected() {
        assert!(to_latent(&field(vec![1.0]), 0.0).is_err());
        assert!(to_latent(&field(vec![1.0]), -1.0).is_err());
    }

    #[test]
    fn scale_roundtrip_and_unknown_channel() {
        let shape = Shape::new(Dims::new(1, 2, 2), vec!["lwc".into(), "re".into()]).unwrap();
        let x = Field::new(shape, (0..8).map(|i| i as f64 * 0.37).collect()).unwrap();
        let s = ScaleSpec::new([("lwc".to_string(), 3.0), ("re".to_string(), 0.01)]).unwrap();
        let fwd = apply_scale(&x, &s, ScaleDirection::Forward).unwrap();
        assert_eq!(fwd.values()[2], x.values()[2] * 3.0);
        assert_eq!(fwd.values()[3], x.values()[3] * 0.01);
        let back = apply_scale(&fwd, &s, ScaleDirection::Inverse).unwrap();
        for (a, b) in back.values().iter().zip(x.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        let ident = ScaleSpec::identity(&x.shape().channels);
        assert_eq!(apply_scale(&x, &ident, ScaleDirection::Forward).unwrap(), x);

        let partial = ScaleSpec::new([("lwc".to_string(), 1.0)]).unwrap();
        assert!(matches!(
            apply_scale(&x, &partial, ScaleDirection::Forward),
            Err(Error::UnknownChannel(c)) if c == "re"
        ));
        assert!(ScaleSpec::new([("a".to_string(), 0.0)]).is_err());
    }

    #[test]
    fn percentile_scale_maps_p95_to_one() {
        // 1..=100 plus zeros; positive p95 is 95.
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        v.extend(std::iter::repeat_n(0.0, 50));
        let f = field(v);
        let s = ScaleSpec::from_percentile(&f.shape().channels, [&f], 0.95).unwrap();
        assert_eq!(s.factor("v").unwrap(), 1.0 / 95.0);
        let scaled = apply_scale(&f, &s, ScaleDirection::Forward).unwrap();
        assert!(scaled.values().iter().any(|&v| v == 1.0));
    }
}
