//! Synthetic training corpus of sparse, nonnegative 3D blobs.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, Field, Shape};
use crate::latent::ScaleSpec;
use crate::rng::{Purpose, Streams};

/// Largest edge length accepted for generated scenes.
pub const MAX_EDGE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobParams {
    /// Blob count is uniform on `0..=max_blobs`.
    pub max_blobs: usize,
    /// Gaussian standard deviation, in voxels, uniform on `[radius_min, radius_max]`.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Support radius in units of the standard deviation.
    pub truncation: f64,
    /// Peak amplitudes are `exp(N(log_peak_mean, log_peak_std^2))`, drawn per channel.
    pub log_peak_mean: f64,
    pub log_peak_std: f64,
    /// Relative increase of the non-leading channels from blob bottom to top.
    pub height_gain: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            max_blobs: 3,
            radius_min: 1.0,
            radius_max: 2.5,
            truncation: 2.0,
            log_peak_mean: 0.0,
            log_peak_std: 0.5,
            height_gain: 1.0,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius_min > 0.0
            && self.radius_max >= self.radius_min
            && self.truncation > 0.0
            && self.log_peak_std >= 0.0
            && self.height_gain >= 0.0
            && self.log_peak_mean.is_finite()
            && self.radius_max.is_finite()
            && self.truncation.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid blob parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub dims: [usize; 3],
    pub channels: Vec<String>,
    pub seed: u64,
    pub params: BlobParams,
    pub scale: ScaleSpec,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: Shape,
    pub scenes: Vec<Field>,
    pub scale: ScaleSpec,
}

pub fn default_channels() -> Vec<String> {
    vec!["lwc".to_string(), "re".to_string()]
}

/// Generates `n_scenes` independent scenes; scene `i` draws only from stream `(Dataset, i)`.
///
/// The returned scale maps each channel's 95th percentile of positive values to 1.
pub fn make_blob_dataset(
    n_scenes: usize,
    dims: Dims,
    channels: Vec<String>,
    seed: u64,
    params: &BlobParams,
) -> Result<Dataset> {
    dims.validate()?;
    if dims.nz > MAX_EDGE || dims.ny > MAX_EDGE || dims.nx > MAX_EDGE {
        return Err(Error::InvalidArgument(format!(
            "scene edges are limited to {MAX_EDGE}, got {dims:?}"
        )));
    }
    params.validate()?;
    let shape = Shape::new(dims, channels)?;
    let streams = Streams::new(seed);
    let scenes = (0..n_scenes)
        .into_par_iter()
        .map(|i| blob_scene(&shape, streams, i as u64, params))
        .collect::<Result<Vec<_>>>()?;
    let scale = ScaleSpec::from_percentile(&shape.channels, &scenes, 0.95)?;
    Ok(Dataset { shape, scenes, scale })
}

struct Blob {
    centre: [f64; 3],
    radius: f64,
    peaks: Vec<f64>,
}

fn blob_scene(shape: &Shape, streams: Streams, index: u64, p: &BlobParams) -> Result<Field> {
    let mut rng = streams.stream(Purpose::Dataset, index);
    let d = shape.dims;
    let count = rng.random_range(0..=p.max_blobs);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let centre = [
                rng.random::<f64>() * (d.nz - 1) as f64,
                rng.random::<f64>() * (d.ny - 1) as f64,
                rng.random::<f64>() * (d.nx - 1) as f64,
            ];
            let radius = if p.radius_max > p.radius_min {
                rng.random_range(p.radius_min..p.radius_max)
            } else {
                p.radius_min
            };
            let peaks = (0..shape.n_channels())
                .map(|_| {
                    let n: f64 = rng.sample(StandardNormal);
                    (p.log_peak_mean + p.log_peak_std * n).exp()
                })
                .collect();
            Blob { centre, radius, peaks }
        })
        .collect();

    // Profile shifted so it reaches exactly zero at the support edge.
    let floor = (-0.5 * p.truncation * p.truncation).exp();
    let mut values = vec![0.0; shape.len()];
    for b in &blobs {
        let reach = p.truncation * b.radius;
        let span = |c: f64, n: usize| {
            let lo = (c - reach).ceil().max(0.0) as usize;
            let hi = ((c + reach).floor() as usize).min(n - 1);
            lo..=hi
        };
        for z in span(b.centre[0], d.nz) {
            let dz = z as f64 - b.centre[0];
            let height = 0.5 * (dz / reach + 1.0);
            for y in span(b.centre[1], d.ny) {
                let dy = y as f64 - b.centre[1];
                for x in span(b.centre[2], d.nx) {
                    let dx = x as f64 - b.centre[2];
                    let r2 = (dz * dz + dy * dy + dx * dx) / (b.radius * b.radius);
                    let g = ((-0.5 * r2).exp() - floor) / (1.0 - floor);
                    if g <= 0.0 {
                        continue;
                    }
                    let base = shape.index(z, y, x, 0);
                    values[base] += b.peaks[0] * g;
                    for c in 1..shape.n_channels() {
                        values[base + c] +=
                            b.peaks[c] * g.sqrt() * (1.0 + p.height_gain * height);
                    }
                }
            }
        }
    }
    Field::new(shape.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset() {
        let ds = make_blob_dataset(0, Dims::cube(16), default_channels(), 1, &BlobParams::default())
            .unwrap();
        assert!(ds.scenes.is_empty());
        assert!(ds.scale.is_identity());
    }

    #[test]
    fn deterministic_and_order_independent() {
        let p = BlobParams::default();
        let a = make_blob_dataset(6, Dims::cube(8), default_channels(), 9, &p).unwrap();
        let b = make_blob_dataset(3, Dims::cube(8), default_channels(), 9, &p).unwrap();
        for (x, y) in a.scenes.iter().zip(&b.scenes) {
            assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn oversized_rejected() {
        let p = BlobParams::default();
        assert!(make_blob_dataset(1, Dims::cube(33), default_channels(), 0, &p).is_err());
    }

    #[test]
    fn second_channel_grows_with_height() {
        let p = BlobParams {
            max_blobs: 1,
            log_peak_std: 0.0,
            ..BlobParams::default()
        };
        let ds = make_blob_dataset(40, Dims::cube(16), default_channels(), 3, &p).unwrap();
        // With unit peaks, re / sqrt(lwc) = 1 + gain * height rises with z.
        let mut checked = 0;
        for f in &ds.scenes {
            let s = f.shape();
            for y in 0..16 {
                for x in 0..16 {
                    let ratios: Vec<f64> = (0..16)
                        .filter_map(|z| {
                            let l = f.values()[s.index(z, y, x, 0)];
                            let r = f.values()[s.index(z, y, x, 1)];
                            (l > 0.0).then(|| r / l.sqrt())
                        })
                        .collect();
                    if ratios.len() >= 3 {
                        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
    }
}
