//! Maximum intensity projections written as 16-bit binary PGM.

use nnd_core::{Axis, Error, Grid};
use serde::{Deserialize, Serialize};

pub const PGM_MAXVAL: u16 = 65535;

/// A 2D image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Max over `axis` of one channel.
///
/// Rows and columns are the remaining axes in `z, y, x` order: along `z` the
/// image is `y` by `x`, along `y` it is `z` by `x`, along `x` it is `z` by `y`.
pub fn max_project(grid: &Grid, channel: usize, axis: Axis) -> Projection {
    let shape = grid.shape();
    let d = shape.dims;
    let (height, width) = match axis {
        Axis::Z => (d.ny, d.nx),
        Axis::Y => (d.nz, d.nx),
        Axis::X => (d.nz, d.ny),
    };
    let mut pixels = vec![f64::NEG_INFINITY; height * width];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let (r, c) = match axis {
                    Axis::Z => (y, x),
                    Axis::Y => (z, x),
                    Axis::X => (z, y),
                };
                let v = grid.values()[shape.index(z, y, x, channel)];
                let p = &mut pixels[r * width + c];
                *p = p.max(v);
            }
        }
    }
    Projection { width, height, pixels }
}

/// How image levels relate to field values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipSidecar {
    pub channel: String,
    pub axis: Axis,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub gamma: f64,
    pub maxval: u16,
    pub mapping: String,
}

/// `round(65535 * (v / max)^(1 / gamma))`, all zero when `max` is 0.
pub fn to_levels(p: &Projection, gamma: f64) -> nnd_core::Result<(Vec<u16>, f64, f64)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let max = p.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p.pixels.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        return Err(Error::InvalidArgument(format!("cannot render negative value {min}")));
    }
    let levels = p
        .pixels
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (f64::from(PGM_MAXVAL) * (v / max).powf(1.0 / gamma)).round() as u16
            } else {
                0
            }
        })
        .collect();
    Ok((levels, min, max))
}

/// Binary `P5` with big-endian 16-bit samples.
pub fn encode_pgm(width: usize, height: usize, levels: &[u16]) -> Vec<u8> {
    assert_eq!(levels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n{PGM_MAXVAL}\n").into_bytes();
    out.reserve(levels.len() * 2);
    for l in levels {
        out.extend_from_slice(&l.to_be_bytes());
    }
    out
}

/// Image bytes and sidecar for one channel.
pub fn render(
    grid: &Grid,
    channel: &str,
    axis: Axis,
    gamma: f64,
) -> nnd_core::Result<(Vec<u8>, MipSidecar)> {
    let c = grid.shape().channel_index(channel)?;
    let p = max_project(grid, c, axis);
    let (levels, min, max) = to_levels(&p, gamma)?;
    let sidecar = MipSidecar {
        channel: channel.to_string(),
        axis,
        width: p.width,
        height: p.height,
        min,
        max,
        gamma,
        maxval: PGM_MAXVAL,
        mapping: "level = round(maxval * (value / max)^(1 / gamma)); 0 if max == 0".into(),
    };
    Ok((encode_pgm(p.width, p.height, &levels), sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nnd_core::{Dims, Shape};

    fn ramp() -> Grid {
        let shape = Shape::new(Dims::new(2, 3, 4), vec!["a".into()]).unwrap();
        Grid::new(shape, (0..24).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn projection_axes() {
        let g = ramp();
        let z = max_project(&g, 0, Axis::Z);
        assert_eq!((z.height, z.width), (3, 4));
        assert_eq!(z.pixels[0], 12.0);
        let y = max_project(&g, 0, Axis::Y);
        assert_eq!((y.height, y.width), (2, 4));
        assert_eq!(y.pixels[4], 20.0);
        let x = max_project(&g, 0, Axis::X);
        assert_eq!((x.height, x.width), (2, 3));
        assert_eq!(x.pixels[5], 23.0);
    }

    #[test]
    fn pgm_header_and_samples() {
        let bytes = encode_pgm(2, 1, &[1, 65535]);
        assert_eq!(&bytes[..13], b"P5\n2 1\n65535\n");
        assert_eq!(bytes.len(), 13 + 4);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 255, 255]);
    }

    #[test]
    fn gamma_and_degenerate_input() {
        let p = Projection { width: 2, height: 1, pixels: vec![0.25, 1.0] };
        let (l, _, max) = to_levels(&p, 2.0).unwrap();
        assert_eq!(max, 1.0);
        assert_eq!(l, vec![32768, 65535]);
        let zero = Projection { width: 1, height: 1, pixels: vec![0.0] };
        assert_eq!(to_levels(&zero, 1.0).unwrap().0, vec![0]);
        assert!(to_levels(&p, 0.0).is_err());
        assert!(render(&ramp(), "b", Axis::Z, 1.0).is_err());
    }
}
