//! Denoiser training: sample a scene and a noise level, corrupt the clean
//! latent, and descend the squared error between the clean latent and the
//! network output.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conv::Neighbours;
use super::neural::NeuralDenoiser;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Shape};
use crate::latent::{apply_scale, to_latent, ScaleDirection, ScaleSpec};
use crate::rng::{fill_normal, Purpose, Streams};
use crate::schedule::TrainSigmas;

/// Clean training latents `log(scale * x + eps)`, all of one shape.
#[derive(Debug, Clone)]
pub struct TrainData {
    shape: Shape,
    targets: Vec<Grid>,
}

impl TrainData {
    pub fn from_fields(fields: &[Field], scale: &ScaleSpec, eps: f64) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("training dataset is empty".into()))?;
        let shape = first.shape().clone();
        let targets = fields
            .iter()
            .map(|f| {
                shape.ensure_same(f.shape())?;
                let scaled = apply_scale(f, scale, ScaleDirection::Forward)?;
                to_latent(&scaled, eps)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape, targets })
    }

    pub fn from_latents(targets: Vec<Grid>) -> Result<Self> {
        let first = targets
            .first()
            .ok_or_else(|| Error::InvalidArgument("training dataset is empty".into()))?;
        let shape = first.shape().clone();
        for t in &targets {
            shape.ensure_same(t.shape())?;
            t.ensure_finite()?;
        }
        Ok(Self { shape, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn targets(&self) -> &[Grid] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub batch: usize,
    pub steps: usize,
    /// Evaluate the validation loss every this many steps (0 disables).
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch: 32,
            steps: 5000,
            eval_every: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    /// Optimizer step count at which the loss was measured.
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-element squared error of each training batch.
    pub loss: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
}

struct Example {
    scene: usize,
    level: usize,
    noisy: Vec<f64>,
}

/// Runs `opts.steps` optimizer steps, continuing from the model's step count.
///
/// Step `s` draws from stream `(TrainStep, s)`, so training in several
/// chunks is bit-identical to one long call.
pub fn train(
    net: &mut NeuralDenoiser,
    data: &TrainData,
    sigmas: &TrainSigmas,
    opts: &TrainOptions,
    validation: Option<&TrainData>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if opts.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if data.shape().channels != net.meta().channels {
        return Err(Error::ShapeMismatch(format!(
            "dataset channels {:?}, model channels {:?}",
            data.shape().channels,
            net.meta().channels
        )));
    }
    let nb = Neighbours::new(data.shape().dims);
    let streams = Streams::new(net.meta().seed);
    let adam_cfg = net.meta().adam;
    let n_elems = data.shape().len();
    let mut report = TrainReport::default();

    for _ in 0..opts.steps {
        let step = net.adam().step;
        let mut rng = streams.stream(Purpose::TrainStep, step);
        let examples: Vec<Example> = (0..opts.batch)
            .map(|_| {
                let scene = rng.random_range(0..data.len());
                let level = rng.random_range(1..=sigmas.len());
                let sigma = sigmas.sigma(level);
                let mut noisy = vec![0.0; n_elems];
                fill_normal(&mut rng, &mut noisy);
                for (n, t) in noisy.iter_mut().zip(data.targets[scene].values()) {
                    *n = t + sigma * *n;
                }
                Example {
                    scene,
                    level,
                    noisy,
                }
            })
            .collect();

        let model = &*net;
        let scale = 2.0 / (n_elems as f64 * opts.batch as f64);
        let per_example: Vec<(f64, Vec<f64>)> = examples
            .par_iter()
            .map(|ex| {
                let sigma = sigmas.sigma(ex.level);
                let target = data.targets[ex.scene].values();
                let (sq, grad) = model.example_grad(&nb, &ex.noisy, target, sigma, scale);
                (sq / n_elems as f64, grad)
            })
            .collect();

        // Fixed-order reduction keeps runs bit-reproducible regardless of threads.
        let mut grad = vec![0.0; net.params().len()];
        let mut loss = 0.0;
        for (l, g) in &per_example {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= opts.batch as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let worst = per_example
                .iter()
                .position(|(l, _)| !l.is_finite())
                .unwrap_or(0);
            return Err(Error::TrainingDiverged {
                step: step as usize,
                sigma_index: examples[worst].level,
                scenes: examples.iter().map(|e| e.scene).collect(),
            });
        }
        let (params, adam) = net.params_and_adam();
        adam.update(&adam_cfg, params, &grad);
        report.loss.push(loss);

        let done = net.adam().step;
        if let Some(val) = validation {
            if opts.eval_every > 0 && done % opts.eval_every as u64 == 0 {
                report.validation.push(ValidationPoint {
                    step: done,
                    loss: validation_loss(net, val, sigmas)?,
                });
            }
        }
    }
    Ok(report)
}

/// Mean squared error on a fixed validation draw.
///
/// Example `j` uses scene `j`, the level at the midpoint of the `j`-th of
/// `len` equal slices of `1..=L`, and noise from stream `(Validation, j)`
/// under seed 0, so the draw depends only on the data.
pub fn validation_loss(net: &NeuralDenoiser, data: &TrainData, sigmas: &TrainSigmas) -> Result<f64> {
    let n = data.len();
    let l = sigmas.len();
    let streams = Streams::new(0);
    let nb = Neighbours::new(data.shape().dims);
    let losses: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let level = 1 + ((2 * j + 1) * l) / (2 * n);
            let sigma = sigmas.sigma(level.min(l));
            let target = data.targets[j].values();
            let mut noisy = vec![0.0; target.len()];
            fill_normal(&mut streams.stream(Purpose::Validation, j as u64), &mut noisy);
            for (v, t) in noisy.iter_mut().zip(target) {
                *v = t + sigma * *v;
            }
            let out = net.forward_cached(&nb, &noisy, sigma).out;
            out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / target.len() as f64
        })
        .collect();
    let loss = losses.iter().sum::<f64>() / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical("validation loss is not finite".into()));
    }
    Ok(loss)
}

/// Mean squared error of the network and of the identity map at one noise level.
pub fn mse_at_sigma(
    net: &NeuralDenoiser,
    data: &TrainData,
    sigma: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    super::check_sigma(sigma)?;
    let streams = Streams::new(seed);
    let nb = Neighbours::new(data.shape().dims);
    let per: Vec<(f64, f64)> = (0..data.len())
        .into_par_iter()
        .map(|j| {
            let target = data.targets[j].values();
            let mut noisy = vec![0.0; target.len()];
            fill_normal(&mut streams.stream(Purpose::Test, j as u64), &mut noisy);
            for (v, t) in noisy.iter_mut().zip(target) {
                *v = t + sigma * *v;
            }
            let out = net.forward_cached(&nb, &noisy, sigma).out;
            let n = target.len() as f64;
            let net_mse = out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n;
            let id_mse = noisy.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n;
            (net_mse, id_mse)
        })
        .collect();
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Trailing moving average over `window` entries.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
