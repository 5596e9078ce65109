//! Small noise-conditional convolutional denoiser.
//!
//! Input is the latent grid with one extra constant channel holding
//! `log(sigma)`. Three 3x3x3 convolutions map `C+1 -> 16 -> 16 -> C`, with
//! softplus after the first two and a linear output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{
    conv_backward_input, conv_backward_weights, conv_forward, softplus_and_slope, Neighbours,
    MAX_WIDTH, TAPS,
};
use super::{check_sigma, Denoiser};
use crate::error::{Error, Result};
use crate::grid::{Dims, Grid};
use crate::latent::ScaleSpec;
use crate::rng::{Purpose, Streams};
use crate::schedule::TrainSigmaConfig;

pub const HIDDEN_CHANNELS: usize = 16;
pub const ARCHITECTURE: &str = "conv3x3x3-softplus-3layer";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One AdamW update with decoupled weight decay.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
        }
    }
}

/// Everything that must agree between training and sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub channels: Vec<String>,
    pub eps: f64,
    pub scale: ScaleSpec,
    pub train_sigmas: TrainSigmaConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    c_in: usize,
    c_out: usize,
}

impl Layer {
    fn w_len(&self) -> usize {
        TAPS * self.c_in * self.c_out
    }

    fn end(&self) -> usize {
        self.b + self.c_out
    }
}

fn layers(c: usize) -> [Layer; 3] {
    let dims = [(c + 1, HIDDEN_CHANNELS), (HIDDEN_CHANNELS, HIDDEN_CHANNELS), (HIDDEN_CHANNELS, c)];
    let mut off = 0;
    dims.map(|(c_in, c_out)| {
        let w = off;
        let b = w + TAPS * c_in * c_out;
        off = b + c_out;
        Layer { w, b, c_in, c_out }
    })
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct Cache {
    in0: Vec<f64>,
    /// Hidden activations and their slopes `sigmoid(z)`.
    a1: Vec<f64>,
    s1: Vec<f64>,
    a2: Vec<f64>,
    s2: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDenoiser {
    meta: ModelMeta,
    params: Vec<f64>,
    adam: AdamState,
}

impl NeuralDenoiser {
    pub fn param_count(channels: usize) -> usize {
        let l = layers(channels)[2];
        l.b + l.c_out
    }

    /// All-zero parameters; the network then outputs zeros everywhere.
    pub fn zeros(meta: ModelMeta) -> Result<Self> {
        check_channel_count(meta.channels.len())?;
        let n = Self::param_count(meta.channels.len());
        Ok(Self {
            meta,
            params: vec![0.0; n],
            adam: AdamState::new(n),
        })
    }

    /// Uniform `+-1/sqrt(fan_in)` initialisation drawn from the model seed.
    pub fn init(meta: ModelMeta) -> Result<Self> {
        let mut net = Self::zeros(meta)?;
        let mut rng = Streams::new(net.meta.seed).stream(Purpose::TrainInit, 0);
        for l in layers(net.meta.channels.len()) {
            let bound = 1.0 / ((TAPS * l.c_in) as f64).sqrt();
            for p in &mut net.params[l.w..l.b + l.c_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_parts(meta: ModelMeta, params: Vec<f64>, adam: AdamState) -> Result<Self> {
        check_channel_count(meta.channels.len())?;
        let n = Self::param_count(meta.channels.len());
        if params.len() != n || adam.m.len() != n || adam.v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "model with {} channels needs {n} parameters, got {}",
                meta.channels.len(),
                params.len()
            )));
        }
        Ok(Self { meta, params, adam })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub(crate) fn params_and_adam(&mut self) -> (&mut [f64], &mut AdamState) {
        (&mut self.params, &mut self.adam)
    }

    pub fn n_channels(&self) -> usize {
        self.meta.channels.len()
    }

    fn check_params(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            Some(index) => Err(Error::Numerical(format!(
                "model parameter {index} is {}; training diverged",
                self.params[index]
            ))),
            None => Ok(()),
        }
    }

    fn check_input(&self, rho: &Grid) -> Result<()> {
        if rho.shape().channels != self.meta.channels {
            return Err(Error::ShapeMismatch(format!(
                "model channels {:?}, input channels {:?}",
                self.meta.channels,
                rho.shape().channels
            )));
        }
        rho.ensure_finite()
    }

    pub(crate) fn forward_cached(&self, nb: &Neighbours, latent: &[f64], sigma: f64) -> Cache {
        let c = self.n_channels();
        let [l1, l2, l3] = layers(c);
        let p = &self.params;

        let log_sigma = sigma.ln();
        let mut in0 = Vec::with_capacity(nb.voxels() * (c + 1));
        for row in latent.chunks_exact(c) {
            in0.extend_from_slice(row);
            in0.push(log_sigma);
        }

        let mut z = Vec::new();
        conv_forward(nb, &in0, l1.c_in, &p[l1.w..l1.b], &p[l1.b..l1.end()], &mut z);
        let (a1, s1) = activate(&z);
        conv_forward(nb, &a1, l2.c_in, &p[l2.w..l2.b], &p[l2.b..l2.end()], &mut z);
        let (a2, s2) = activate(&z);
        let mut out = Vec::new();
        conv_forward(nb, &a2, l3.c_in, &p[l3.w..l3.b], &p[l3.b..l3.end()], &mut out);

        Cache {
            in0,
            a1,
            s1,
            a2,
            s2,
            out,
        }
    }

    /// Squared error of one example and its gradient, with `d_out = scale * (out - target)`.
    pub(crate) fn example_grad(
        &self,
        nb: &Neighbours,
        noisy: &[f64],
        target: &[f64],
        sigma: f64,
        scale: f64,
    ) -> (f64, Vec<f64>) {
        let cache = self.forward_cached(nb, noisy, sigma);
        let mut sq = 0.0;
        let d_out: Vec<f64> = cache
            .out
            .iter()
            .zip(target)
            .map(|(o, t)| {
                let r = o - t;
                sq += r * r;
                scale * r
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backward(nb, &cache, &d_out, Some(&mut grad), false);
        (sq, grad)
    }

    /// Per-element mean squared error `|D(noisy) - target|^2 / n` and its
    /// gradient with respect to the parameters.
    pub fn mse_and_grad(&self, noisy: &Grid, target: &Grid, sigma: f64) -> Result<(f64, Vec<f64>)> {
        check_sigma(sigma)?;
        self.check_input(noisy)?;
        noisy.shape().ensure_same(target.shape())?;
        let n = noisy.len() as f64;
        let (sq, grad) =
            self.example_grad(&neighbours_for(noisy), noisy.values(), target.values(), sigma, 2.0 / n);
        Ok((sq / n, grad))
    }

    /// Pulls `d_out` (voxels x C) back through the network.
    ///
    /// Accumulates parameter gradients into `param_grad` when given and
    /// returns the gradient with respect to the latent input when asked.
    pub(crate) fn backward(
        &self,
        nb: &Neighbours,
        cache: &Cache,
        d_out: &[f64],
        mut param_grad: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let c = self.n_channels();
        let v = nb.voxels();
        let [l1, l2, l3] = layers(c);
        let p = &self.params;

        accumulate_layer_grads(nb, &mut param_grad, l3, &cache.a2, d_out);
        let mut d_a2 = vec![0.0; v * l3.c_in];
        conv_backward_input(nb, d_out, l3.c_in, l3.c_out, &p[l3.w..l3.b], &mut d_a2);
        let d_z2: Vec<f64> = d_a2.iter().zip(&cache.s2).map(|(d, s)| d * s).collect();

        accumulate_layer_grads(nb, &mut param_grad, l2, &cache.a1, &d_z2);
        let mut d_a1 = vec![0.0; v * l2.c_in];
        conv_backward_input(nb, &d_z2, l2.c_in, l2.c_out, &p[l2.w..l2.b], &mut d_a1);
        let d_z1: Vec<f64> = d_a1.iter().zip(&cache.s1).map(|(d, s)| d * s).collect();

        accumulate_layer_grads(nb, &mut param_grad, l1, &cache.in0, &d_z1);
        if !want_input_grad {
            return None;
        }
        let mut d_in = vec![0.0; v * l1.c_in];
        conv_backward_input(nb, &d_z1, l1.c_in, l1.c_out, &p[l1.w..l1.b], &mut d_in);
        // Drop the log-sigma channel.
        Some(
            d_in.chunks_exact(c + 1)
                .flat_map(|row| row[..c].iter().copied())
                .collect(),
        )
    }
}

fn activate(z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    z.iter().map(|&z| softplus_and_slope(z)).unzip()
}

/// The input layer carries the channels plus log sigma, so at most `MAX_WIDTH - 1`.
fn check_channel_count(c: usize) -> Result<()> {
    if (1..MAX_WIDTH).contains(&c) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "model supports 1 to {} channels, got {c}",
            MAX_WIDTH - 1
        )))
    }
}

fn accumulate_layer_grads(
    nb: &Neighbours,
    param_grad: &mut Option<&mut [f64]>,
    l: Layer,
    input: &[f64],
    d_z: &[f64],
) {
    if let Some(g) = param_grad.as_deref_mut() {
        let (gw, gb) = g[l.w..l.end()].split_at_mut(l.w_len());
        conv_backward_weights(nb, input, l.c_in, d_z, gw, gb);
    }
}

fn neighbours_for(rho: &Grid) -> Neighbours {
    let Dims { nz, ny, nx } = rho.dims();
    Neighbours::new(Dims::new(nz, ny, nx))
}

impl Denoiser for NeuralDenoiser {
    fn denoise(&self, rho_noisy: &Grid, sigma: f64) -> Result<Grid> {
        check_sigma(sigma)?;
        self.check_params()?;
        self.check_input(rho_noisy)?;
        let nb = neighbours_for(rho_noisy);
        let cache = self.forward_cached(&nb, rho_noisy.values(), sigma);
        let out = rho_noisy.with_values(cache.out)?;
        out.ensure_finite()?;
        Ok(out)
    }

    fn vjp(&self, rho_noisy: &Grid, sigma: f64, cotangent: &Grid) -> Result<Grid> {
        check_sigma(sigma)?;
        self.check_params()?;
        self.check_input(rho_noisy)?;
        rho_noisy.shape().ensure_same(cotangent.shape())?;
        let nb = neighbours_for(rho_noisy);
        let cache = self.forward_cached(&nb, rho_noisy.values(), sigma);
        let grad = self
            .backward(&nb, &cache, cotangent.values(), None, true)
            .expect("input gradient requested");
        rho_noisy.with_values(grad)
    }

    fn channels(&self) -> Option<&[String]> {
        Some(&self.meta.channels)
    }

    fn eps(&self) -> Option<f64> {
        Some(self.meta.eps)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::Shape;

    pub fn meta(channels: &[&str], seed: u64) -> ModelMeta {
        let channels: Vec<String> = channels.iter().map(|s| s.to_string()).collect();
        ModelMeta {
            scale: ScaleSpec::identity(&channels),
            channels,
            eps: crate::latent::DEFAULT_EPS,
            train_sigmas: TrainSigmaConfig::default(),
            adam: AdamConfig::default(),
            seed,
        }
    }

    #[test]
    fn param_count_formula() {
        // (27*2*16 + 16) + (27*16*16 + 16) + (27*16*1 + 1)
        assert_eq!(NeuralDenoiser::param_count(1), 880 + 6928 + 433);
        assert_eq!(NeuralDenoiser::param_count(2), 27 * 3 * 16 + 16 + 6928 + 27 * 16 * 2 + 2);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = NeuralDenoiser::zeros(meta(&["v"], 0)).unwrap();
        let s = Shape::scalar_channel(Dims::cube(4));
        let rho = Grid::new(s.clone(), (0..64).map(|i| i as f64 - 30.0).collect()).unwrap();
        let out = net.denoise(&rho, 0.7).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_params_rejected() {
        let mut net = NeuralDenoiser::init(meta(&["v"], 1)).unwrap();
        net.params_mut()[3] = f64::NAN;
        let rho = Grid::zeros(Shape::scalar_channel(Dims::cube(3)));
        assert!(matches!(net.denoise(&rho, 1.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let net = NeuralDenoiser::init(meta(&["a", "b"], 1)).unwrap();
        let rho = Grid::zeros(Shape::scalar_channel(Dims::cube(3)));
        assert!(net.denoise(&rho, 1.0).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = NeuralDenoiser::init(meta(&["a", "b"], 9)).unwrap();
        let s = Shape::new(Dims::new(3, 4, 5), vec!["a".into(), "b".into()]).unwrap();
        let rho = Grid::new(s.clone(), (0..s.len()).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = net.denoise(&rho, 0.3).unwrap();
        let b = net.denoise(&rho, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        st.update(&cfg, &mut p, &[0.5, -3.0]);
        // m_hat / sqrt(v_hat) = sign(g) on the first step
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((p[1] - (-1.0 + 1e-4)).abs() < 1e-10);
    }
}

