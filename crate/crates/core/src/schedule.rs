//! Training noise levels and the annealing / step-size sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the geometric training-sigma sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSigmaConfig {
    pub levels: usize,
    pub sigma_first: f64,
    pub sigma_last: f64,
}

impl Default for TrainSigmaConfig {
    fn default() -> Self {
        Self {
            levels: 150,
            sigma_first: 1e-2,
            sigma_last: 1e2,
        }
    }
}

/// `sigma_i = sigma_L * (sigma_1 / sigma_L)^((L - i) / (L - 1))`, `i = 1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSigmas {
    config: TrainSigmaConfig,
    values: Vec<f64>,
}

impl TrainSigmas {
    pub fn new(config: TrainSigmaConfig) -> Result<Self> {
        let TrainSigmaConfig {
            levels,
            sigma_first,
            sigma_last,
        } = config;
        if levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 training sigmas, got {levels}"
            )));
        }
        check_positive("sigma_first", sigma_first)?;
        check_positive("sigma_last", sigma_last)?;
        let ratio = sigma_first / sigma_last;
        let denom = (levels - 1) as f64;
        let values = (1..=levels)
            .map(|i| sigma_last * ratio.powf((levels - i) as f64 / denom))
            .collect();
        Ok(Self { config, values })
    }

    pub fn config(&self) -> TrainSigmaConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `i`-th level, 1-based.
    pub fn sigma(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn train_sigmas(levels: usize, sigma_first: f64, sigma_last: f64) -> Result<TrainSigmas> {
    TrainSigmas::new(TrainSigmaConfig {
        levels,
        sigma_first,
        sigma_last,
    })
}

/// Parameters of the staircase annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    /// Iteration count `T`.
    pub steps: usize,
    /// Staircase period `K`.
    pub period: usize,
    /// `sigma_1`, the level used at the final iterations.
    pub sigma_min: f64,
    /// `sigma_T`, the level used at the first iterations.
    pub sigma_max: f64,
    pub zeta: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            period: 5,
            sigma_min: 1e-2,
            sigma_max: 1e2,
            zeta: 2e-6,
        }
    }
}

/// Staircase `sigma_t` and step sizes `alpha_t = zeta (sigma_t / sigma_1)^2`.
///
/// `t` counts down from `T` to 1; both arrays are stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    config: AnnealConfig,
    sigmas: Vec<f64>,
    alphas: Vec<f64>,
}

impl AnnealSchedule {
    pub fn new(config: AnnealConfig) -> Result<Self> {
        let AnnealConfig {
            steps,
            period,
            sigma_min,
            sigma_max,
            zeta,
        } = config;
        if period == 0 {
            return Err(Error::InvalidArgument("staircase period must be positive".into()));
        }
        if steps <= period {
            return Err(Error::InvalidArgument(format!(
                "iteration count {steps} must exceed the staircase period {period}"
            )));
        }
        check_positive("sigma_min", sigma_min)?;
        check_positive("sigma_max", sigma_max)?;
        check_positive("zeta", zeta)?;

        let blocks = steps / period;
        // A trailing partial block repeats the last full block, so sigma_T stays pinned.
        if steps % period != 0 && blocks < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two full staircase blocks when T={steps} is not a multiple of K={period}"
            )));
        }
        let ratio = sigma_max / sigma_min;
        let sigmas: Vec<f64> = (1..=steps)
            .map(|t| {
                let block = (t - 1) / period;
                let exponent = if steps % period == 0 {
                    (period as f64 / (steps - period) as f64) * block as f64
                } else {
                    block.min(blocks - 1) as f64 / (blocks - 1) as f64
                };
                sigma_min * ratio.powf(exponent)
            })
            .collect();
        let alphas = sigmas
            .iter()
            .map(|s| {
                let r = s / sigma_min;
                zeta * r * r
            })
            .collect();
        Ok(Self {
            config,
            sigmas,
            alphas,
        })
    }

    pub fn config(&self) -> AnnealConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len()
    }

    /// `sigma_t`, for `t` in `1..=T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// `alpha_t`, for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

pub fn anneal_schedule(
    steps: usize,
    period: usize,
    sigma_min: f64,
    sigma_max: f64,
    zeta: f64,
) -> Result<AnnealSchedule> {
    AnnealSchedule::new(AnnealConfig {
        steps,
        period,
        sigma_min,
        sigma_max,
        zeta,
    })
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}
