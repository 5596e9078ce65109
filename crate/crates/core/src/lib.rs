//! Sampling nonnegative 3D fields with annealed Langevin dynamics run in
//! log space.
//!
//! A field `x >= 0` is represented by the latent `rho = log(x + eps)`. The
//! sampler draws latents with a denoiser-derived score, optionally guided by
//! photon-noise measurements, and returns `exp(rho)`, which is positive by
//! construction.

pub mod denoise;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod latent;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod synthdata;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Axis, Dims, Field, Grid, LatentField, Shape};
