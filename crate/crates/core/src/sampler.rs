//! Annealed Langevin dynamics engines.
//!
//! [`generate`] and [`invert`] iterate in the latent space and exponentiate
//! at the end, so their outputs are strictly positive. The object-space
//! baseline [`generate_direct_baseline`] runs the same recursion without the
//! latent transform and records how many elements go negative.

use serde::{Deserialize, Serialize};

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::forward::{check_measurement, ForwardModel};
use crate::grid::{Field, Grid, Shape};
use crate::latent::{apply_scale, default_eps, from_latent, ScaleDirection, ScaleSpec};
use crate::rng::{self, Purpose, Streams};
use crate::schedule::{AnnealConfig, AnnealSchedule};
use crate::score::{likelihood_term, prior_score_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `rho_T ~ N(log eps, sigma_T^2)`.
    #[default]
    LatentEpsCentered,
    /// `rho_T ~ N(0, sigma_T^2)`.
    LatentZeroCentered,
    /// `x_T ~ N(0, sigma_T^2)` in object space; baseline only.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: AnnealConfig,
    pub eps: f64,
    pub init: InitMode,
    pub seed: u64,
    /// Index of this run among independent runs sharing `seed`.
    pub run_index: u32,
    /// Multiplier on the data term; 0 turns inversion into generation.
    pub likelihood_weight: f64,
    /// Abort once any `|rho|` exceeds this.
    pub divergence_bound: f64,
    /// Keep a latent snapshot every this many iterations.
    pub snapshot_every: Option<usize>,
    /// Record per-iteration statistics.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: AnnealConfig::default(),
            eps: default_eps(),
            init: InitMode::default(),
            seed: 0,
            run_index: 0,
            likelihood_weight: 1.0,
            divergence_bound: 1e3,
            snapshot_every: None,
            trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub sigma: f64,
    pub alpha: f64,
    /// Statistics of the iterate entering iteration `t`.
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub prior_score_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub likelihood_grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    /// Sample std of the injected `sqrt(2 alpha) eta`.
    pub noise_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rng: String,
    pub seed: u64,
    pub run_index: u32,
    pub records: Vec<TraceRecord>,
    /// `(t, iterate entering t)` pairs.
    #[serde(skip)]
    pub snapshots: Vec<(usize, Grid)>,
    /// Set by [`invert`] when the data residual grew at every iteration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_grew_monotonically: Option<bool>,
}

impl Trace {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            rng: rng::ALGORITHM.to_string(),
            seed: cfg.seed,
            run_index: cfg.run_index,
            records: Vec::new(),
            snapshots: Vec::new(),
            residual_grew_monotonically: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "t,sigma,alpha,min,max,mean,prior_score_norm,likelihood_grad_norm,residual_norm,noise_std,negative_fraction\n",
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.sigma,
                r.alpha,
                r.min,
                r.max,
                r.mean,
                r.prior_score_norm,
                opt(r.likelihood_grad_norm),
                opt(r.residual_norm),
                r.noise_std,
                opt(r.negative_fraction)
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `exp(rho_0)`, rescaled to physical units.
    pub field: Field,
    /// Final latent `rho_0` in model units.
    pub latent: Grid,
    pub trace: Trace,
}

/// Generation: Langevin updates driven by the denoiser-derived prior score only.
pub fn generate(
    cfg: &RunConfig,
    shape: &Shape,
    denoiser: &dyn Denoiser,
    scale: Option<&ScaleSpec>,
) -> Result<Sample> {
    run_latent(cfg, shape, denoiser, None, scale)
}

/// Posterior sampling: generation plus `weight * alpha_t` times the data term.
pub fn invert(
    cfg: &RunConfig,
    shape: &Shape,
    denoiser: &dyn Denoiser,
    fm: &dyn ForwardModel,
    y: &[f64],
    scale: Option<&ScaleSpec>,
) -> Result<Sample> {
    check_measurement(y)?;
    if fm.output_len(shape) != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "measurement has {} data, forward model produces {}",
            y.len(),
            fm.output_len(shape)
        )));
    }
    run_latent(cfg, shape, denoiser, Some((fm, y)), scale)
}

fn check_run_index(cfg: &RunConfig) -> Result<()> {
    if cfg.run_index >= rng::MAX_RUNS {
        return Err(Error::InvalidArgument(format!(
            "run index {} must be below {}",
            cfg.run_index,
            rng::MAX_RUNS
        )));
    }
    Ok(())
}

fn check_compat(cfg: &RunConfig, shape: &Shape, denoiser: &dyn Denoiser) -> Result<()> {
    check_run_index(cfg)?;
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", cfg.eps)));
    }
    if !(cfg.divergence_bound > 0.0) {
        return Err(Error::InvalidArgument("divergence bound must be positive".into()));
    }
    if !cfg.likelihood_weight.is_finite() || cfg.likelihood_weight < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "likelihood weight must be finite and nonnegative, got {}",
            cfg.likelihood_weight
        )));
    }
    if let Some(channels) = denoiser.channels() {
        if channels != shape.channels.as_slice() {
            return Err(Error::MetadataMismatch(format!(
                "denoiser channels {channels:?} differ from requested {:?}",
                shape.channels
            )));
        }
    }
    if let Some(eps) = denoiser.eps() {
        if eps != cfg.eps {
            return Err(Error::MetadataMismatch(format!(
                "denoiser was trained with eps={eps}, run requests eps={}",
                cfg.eps
            )));
        }
    }
    Ok(())
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    (lo, hi, sum / values.len() as f64)
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn initial_state(cfg: &RunConfig, schedule: &AnnealSchedule, shape: &Shape) -> Grid {
    let center = match cfg.init {
        InitMode::LatentEpsCentered => cfg.eps.ln(),
        InitMode::LatentZeroCentered | InitMode::Direct => 0.0,
    };
    let sigma_t = schedule.sigma(schedule.steps());
    let streams = Streams::for_run(cfg.seed, cfg.run_index);
    let mut eta = rng::normals(&mut streams.stream(Purpose::Init, 0), shape.len());
    eta.iter_mut().for_each(|v| *v = center + sigma_t * *v);
    Grid::new(shape.clone(), eta).expect("length matches shape")
}

/// The starting iterate `cfg` would use on `shape`, before any update.
pub fn initial_iterate(cfg: &RunConfig, shape: &Shape) -> Result<Grid> {
    check_run_index(cfg)?;
    let schedule = AnnealSchedule::new(cfg.schedule)?;
    Ok(initial_state(cfg, &schedule, shape))
}

/// One Langevin step. Returns the sample std of the injected noise.
fn langevin_step(
    state: &mut [f64],
    drift: &[f64],
    alpha: f64,
    streams: &Streams,
    t: usize,
    eta: &mut [f64],
) -> f64 {
    rng::fill_normal(&mut streams.stream(Purpose::Iteration, t as u64), eta);
    let amp = (2.0 * alpha).sqrt();
    eta.iter_mut().for_each(|e| *e *= amp);
    for ((s, d), e) in state.iter_mut().zip(drift).zip(eta.iter()) {
        *s += alpha * d + e;
    }
    sample_std(eta)
}

fn run_latent(
    cfg: &RunConfig,
    shape: &Shape,
    denoiser: &dyn Denoiser,
    data: Option<(&dyn ForwardModel, &[f64])>,
    scale: Option<&ScaleSpec>,
) -> Result<Sample> {
    if cfg.init == InitMode::Direct {
        return Err(Error::InvalidArgument(
            "init mode `direct` is only valid for the object-space baseline".into(),
        ));
    }
    check_compat(cfg, shape, denoiser)?;
    let schedule = AnnealSchedule::new(cfg.schedule)?;
    let streams = Streams::for_run(cfg.seed, cfg.run_index);
    let mut trace = Trace::new(cfg);
    let mut state = initial_state(cfg, &schedule, shape);
    let mut eta = vec![0.0; shape.len()];
    let data = data.filter(|_| cfg.likelihood_weight != 0.0);
    let mut residuals = Vec::new();

    for t in (1..=schedule.steps()).rev() {
        let sigma = schedule.sigma(t);
        let alpha = schedule.alpha(t);
        if let Some(every) = cfg.snapshot_every.filter(|&m| m > 0) {
            if t % every == 0 {
                trace.snapshots.push((t, state.clone()));
            }
        }
        let denoised = denoiser.denoise(&state, sigma)?;
        let mut drift = prior_score_from(&state, &denoised, sigma)?.into_values();
        let prior_norm = norm(&drift);

        let mut lik_norm = None;
        let mut res_norm = None;
        if let Some((fm, y)) = data {
            let term = likelihood_term(denoiser, fm, y, &state, &denoised, sigma)?;
            let w = cfg.likelihood_weight;
            for (d, g) in drift.iter_mut().zip(term.grad.values()) {
                *d += w * g;
            }
            lik_norm = Some(term.grad.norm());
            res_norm = Some(term.residual_norm);
            residuals.push(term.residual_norm);
        }

        let (lo, hi, mean) = stats(state.values());
        let noise_std = langevin_step(state.values_mut(), &drift, alpha, &streams, t, &mut eta);
        if cfg.trace {
            trace.records.push(TraceRecord {
                t,
                sigma,
                alpha,
                min: lo,
                max: hi,
                mean,
                prior_score_norm: prior_norm,
                likelihood_grad_norm: lik_norm,
                residual_norm: res_norm,
                noise_std,
                negative_fraction: None,
            });
        }

        let worst = state.max_abs();
        if !(worst <= cfg.divergence_bound) {
            return Err(Error::Divergence {
                t,
                value: worst,
                bound: cfg.divergence_bound,
            });
        }
    }

    if data.is_some() {
        trace.residual_grew_monotonically =
            Some(residuals.len() > 1 && residuals.windows(2).all(|w| w[1] > w[0]));
    }

    let x = from_latent(&state)?;
    let field = match scale {
        Some(s) => apply_scale(&x, s, ScaleDirection::Inverse)?,
        None => x,
    };
    Ok(Sample {
        field,
        latent: state,
        trace,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Object-space Langevin dynamics from `x_T ~ N(0, sigma_T^2)`.
///
/// The returned grid is the raw final iterate and may contain negative
/// elements; each trace record carries the negative fraction of the
/// iterate entering that iteration.
pub fn generate_direct_baseline(
    cfg: &RunConfig,
    shape: &Shape,
    denoiser: &dyn Denoiser,
) -> Result<(Grid, Trace)> {
    check_run_index(cfg)?;
    let schedule = AnnealSchedule::new(cfg.schedule)?;
    let base = RunConfig {
        init: InitMode::Direct,
        ..cfg.clone()
    };
    let streams = Streams::for_run(cfg.seed, cfg.run_index);
    let mut trace = Trace::new(cfg);
    let mut state = initial_state(&base, &schedule, shape);
    let mut eta = vec![0.0; shape.len()];

    for t in (1..=schedule.steps()).rev() {
        let sigma = schedule.sigma(t);
        let alpha = schedule.alpha(t);
        let denoised = denoiser.denoise(&state, sigma)?;
        let drift = prior_score_from(&state, &denoised, sigma)?.into_values();
        let (lo, hi, mean) = stats(state.values());
        let negative = state.values().iter().filter(|&&v| v < 0.0).count();
        let noise_std = langevin_step(state.values_mut(), &drift, alpha, &streams, t, &mut eta);
        trace.records.push(TraceRecord {
            t,
            sigma,
            alpha,
            min: lo,
            max: hi,
            mean,
            prior_score_norm: norm(&drift),
            likelihood_grad_norm: None,
            residual_norm: None,
            noise_std,
            negative_fraction: Some(negative as f64 / state.len() as f64),
        });
    }
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{GaussianLatentPrior, IdentityDenoiser, MixtureLatentPrior};
    use crate::forward::IdentityModel;
    use crate::grid::Dims;

    fn short(seed: u64) -> RunConfig {
        RunConfig {
            schedule: AnnealConfig {
                steps: 50,
                ..AnnealConfig::default()
            },
            seed,
            ..RunConfig::default()
        }
    }

    #[test]
    fn output_is_positive_and_deterministic() {
        let shape = Shape::scalar_channel(Dims::cube(4));
        let prior = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
        let a = generate(&short(3), &shape, &prior, None).unwrap();
        let b = generate(&short(3), &shape, &prior, None).unwrap();
        assert!(a.field.min() > 0.0);
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 50);
        let c = generate(&short(4), &shape, &prior, None).unwrap();
        assert_ne!(a.latent, c.latent);
    }

    #[test]
    fn direct_init_rejected_for_latent_sampler() {
        let shape = Shape::scalar_channel(Dims::cube(2));
        let cfg = RunConfig {
            init: InitMode::Direct,
            ..short(0)
        };
        assert!(generate(&cfg, &shape, &IdentityDenoiser, None).is_err());
    }

    #[test]
    fn divergence_guard_fires() {
        let shape = Shape::scalar_channel(Dims::cube(2));
        let cfg = RunConfig {
            divergence_bound: 5.0,
            ..short(0)
        };
        let err = generate(&cfg, &shape, &IdentityDenoiser, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn zero_weight_inversion_equals_generation() {
        let shape = Shape::scalar_channel(Dims::new(1, 2, 3));
        let prior = GaussianLatentPrior::new(0.0, 1.0).unwrap();
        let cfg = RunConfig {
            likelihood_weight: 0.0,
            ..short(9)
        };
        let g = generate(&cfg, &shape, &prior, None).unwrap();
        let i = invert(&cfg, &shape, &prior, &IdentityModel, &[3.0; 6], None).unwrap();
        assert_eq!(g.latent, i.latent);
        assert_eq!(g.field, i.field);
    }

    #[test]
    fn eps_mismatch_is_an_error() {
        struct Tagged;
        impl Denoiser for Tagged {
            fn denoise(&self, r: &Grid, _s: f64) -> Result<Grid> {
                Ok(r.clone())
            }
            fn vjp(&self, _r: &Grid, _s: f64, c: &Grid) -> Result<Grid> {
                Ok(c.clone())
            }
            fn eps(&self) -> Option<f64> {
                Some(1e-3)
            }
        }
        let shape = Shape::scalar_channel(Dims::cube(2));
        assert!(matches!(
            generate(&short(0), &shape, &Tagged, None),
            Err(Error::MetadataMismatch(_))
        ));
    }

    #[test]
    fn baseline_trace_length() {
        let shape = Shape::scalar_channel(Dims::cube(3));
        let (_, trace) = generate_direct_baseline(&short(1), &shape, &IdentityDenoiser).unwrap();
        assert_eq!(trace.len(), 50);
        assert!(trace.records.iter().all(|r| r.negative_fraction.is_some()));
        assert_eq!(trace.records[0].t, 50);
    }

    #[test]
    fn snapshots_are_taken() {
        let shape = Shape::scalar_channel(Dims::cube(2));
        let cfg = RunConfig {
            snapshot_every: Some(10),
            ..short(2)
        };
        let s = generate(&cfg, &shape, &GaussianLatentPrior::new(0.0, 1.0).unwrap(), None).unwrap();
        let ts: Vec<usize> = s.trace.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, vec![50, 40, 30, 20, 10]);
    }
}
