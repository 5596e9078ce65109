//! Multi-channel voxel grids.
//!
//! Values are stored z-major, channel-minor: the flat index of
//! `(z, y, x, c)` is `((z * ny + y) * nx + x) * channels + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent as `(nz, ny, nx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Dims {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Self {
        Self { nz, ny, nx }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn voxels(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nz, self.ny, self.nx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.ny == 0 || self.nx == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dims must be positive, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }
}

/// One of the three grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    Y,
    X,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" | "Z" => Ok(Axis::Z),
            "y" | "Y" => Ok(Axis::Y),
            "x" | "X" => Ok(Axis::X),
            other => Err(Error::InvalidArgument(format!("unknown axis `{other}`"))),
        }
    }
}

/// Dimensions plus ordered channel names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub dims: Dims,
    pub channels: Vec<String>,
}

impl Shape {
    pub fn new(dims: Dims, channels: Vec<String>) -> Result<Self> {
        dims.validate()?;
        if channels.is_empty() {
            return Err(Error::InvalidArgument("at least one channel required".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("duplicate channel `{c}`")));
            }
        }
        Ok(Self { dims, channels })
    }

    /// Single-channel shape named `"v"`, handy for scalar experiments.
    pub fn scalar_channel(dims: Dims) -> Self {
        Self {
            dims,
            channels: vec!["v".to_string()],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.dims.voxels() * self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize, c: usize) -> usize {
        ((z * self.dims.ny + y) * self.dims.nx + x) * self.channels.len() + c
    }

    pub fn ensure_same(&self, other: &Shape) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.dims.as_array(),
                self.channels,
                other.dims.as_array(),
                other.channels
            )));
        }
        Ok(())
    }
}

/// Real-valued grid with no sign constraint.
///
/// Latent fields, score terms and the object-space iterates of the
/// direct baseline sampler all live here.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Shape,
    values: Vec<f64>,
}

/// Real-valued latent representation `rho = log(x + eps)`.
pub type LatentField = Grid;

/// A gradient with respect to a latent field.
pub type ScoreTerm = Grid;

impl Grid {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.len();
        Self {
            shape,
            values: vec![value; n],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Grid of the same shape built from new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.shape.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> Dims {
        self.shape.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Grid) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn channel_values(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        let nc = self.shape.n_channels();
        self.values.iter().skip(c).step_by(nc).copied()
    }
}

/// Nonnegative, finite multi-channel field: the physical object.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
}

impl Field {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        Self::try_from(Grid::new(shape, values)?)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            grid: Grid::zeros(shape),
        }
    }

    pub fn as_grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn shape(&self) -> &Shape {
        self.grid.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.grid.min()
    }

    pub fn max(&self) -> f64 {
        self.grid.max()
    }
}

/// Checks the nonnegativity contract every physical consumer relies on.
pub fn check_nonnegative(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        if value < 0.0 {
            return Err(Error::NegativeValue { index, value });
        }
    }
    Ok(())
}

impl TryFrom<Grid> for Field {
    type Error = Error;

    fn try_from(grid: Grid) -> Result<Self> {
        check_nonnegative(grid.values())?;
        Ok(Self { grid })
    }
}

impl From<Field> for Grid {
    fn from(f: Field) -> Grid {
        f.grid
    }
}
