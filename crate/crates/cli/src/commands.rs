//! Subcommand configs and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nnd_core::denoise::{
    mse_at_sigma, smooth, train, validation_loss, AdamConfig, Denoiser, GaussianLatentPrior,
    IdentityDenoiser, MixtureComponent, MixtureLatentPrior, ModelMeta, NeuralDenoiser, TrainData,
    TrainOptions, ValidationPoint,
};
use nnd_core::forward::{measure, ForwardModel, ForwardModelSpec, NoiseOptions};
use nnd_core::io::{self, Domain, NndfMeta};
use nnd_core::latent::{default_eps, ScaleSpec};
use nnd_core::sampler::{self, RunConfig, Sample};
use nnd_core::schedule::{TrainSigmaConfig, TrainSigmas};
use nnd_core::synthdata::{default_channels, make_blob_dataset, BlobParams, DatasetManifest};
use nnd_core::verify::{format_table, run_checks, CheckRow};
use nnd_core::{Axis, Dims, Error, Field, Grid, Shape};

use crate::error::{CliError, Result};
use crate::mip;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MANIFEST: &str = "manifest.json";

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_file(path, text)
}

fn dims(d: [usize; 3]) -> Dims {
    Dims::new(d[0], d[1], d[2])
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Z => "z",
        Axis::Y => "y",
        Axis::X => "x",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub dims: [usize; 3],
    pub channels: Vec<String>,
    pub seed: u64,
    pub params: BlobParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            dims: [16, 16, 16],
            channels: default_channels(),
            seed: 0,
            params: BlobParams::default(),
        }
    }
}

pub fn make_dataset(cfg: &DatasetConfig, out: &Path) -> Result<()> {
    let ds = make_blob_dataset(cfg.count, dims(cfg.dims), cfg.channels.clone(), cfg.seed, &cfg.params)?;
    let meta = NndfMeta::field(&cfg.channels);
    let mut files = Vec::with_capacity(ds.scenes.len());
    for (i, scene) in ds.scenes.iter().enumerate() {
        let name = format!("scene_{i:04}.nndf");
        io::write_nndf(out.join(&name), scene.as_grid(), &meta)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        count: cfg.count,
        dims: cfg.dims,
        channels: cfg.channels.clone(),
        seed: cfg.seed,
        params: cfg.params.clone(),
        scale: ds.scale,
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    println!("wrote {} scenes to {}", cfg.count, out.display());
    Ok(())
}

/// Reads a dataset directory written by `make-dataset`.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Field>)> {
    let manifest: DatasetManifest = serde_json::from_str(&read_text(&dir.join(MANIFEST))?)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let expected = Shape::new(dims(manifest.dims), manifest.channels.clone())?;
    let scenes = manifest
        .files
        .iter()
        .map(|name| {
            let (grid, meta) = io::read_nndf(dir.join(name))?;
            if meta.domain != Domain::Field {
                return Err(Error::Format(format!("{name} holds latents, expected a field")));
            }
            grid.shape().ensure_same(&expected)?;
            Field::new(expected.clone(), grid.into_values())
        })
        .collect::<nnd_core::Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Directory written by `make-dataset`.
    pub dataset: PathBuf,
    /// The last this many scenes are held out for validation.
    pub validation_scenes: usize,
    pub seed: u64,
    pub eps: f64,
    pub train_sigmas: TrainSigmaConfig,
    pub adam: AdamConfig,
    pub options: TrainOptions,
    /// Window of the moving average over per-step losses in the report.
    pub smoothing_window: usize,
    /// Noise level at which the model is compared with the identity map.
    pub probe_sigma: f64,
    /// Continue from this model instead of a fresh initialization.
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset"),
            validation_scenes: 100,
            seed: 0,
            eps: default_eps(),
            train_sigmas: TrainSigmaConfig::default(),
            adam: AdamConfig::default(),
            options: TrainOptions::default(),
            smoothing_window: 100,
            probe_sigma: 1.0,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeMse {
    pub sigma: f64,
    pub model: f64,
    pub identity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub train_scenes: usize,
    pub validation_scenes: usize,
    pub loss: Vec<f64>,
    pub smoothed_loss: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    pub probe: Option<ProbeMse>,
}

pub fn train_model(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let (manifest, scenes) = load_dataset(&cfg.dataset)?;
    if cfg.validation_scenes >= scenes.len() {
        return Err(CliError::Config(format!(
            "validation_scenes={} leaves no training scenes out of {}",
            cfg.validation_scenes,
            scenes.len()
        )));
    }
    let split = scenes.len() - cfg.validation_scenes;
    let data = TrainData::from_fields(&scenes[..split], &manifest.scale, cfg.eps)?;
    let held_out = if cfg.validation_scenes > 0 {
        Some(TrainData::from_fields(&scenes[split..], &manifest.scale, cfg.eps)?)
    } else {
        None
    };
    let meta = ModelMeta {
        channels: manifest.channels.clone(),
        eps: cfg.eps,
        scale: manifest.scale.clone(),
        train_sigmas: cfg.train_sigmas,
        adam: cfg.adam,
        seed: cfg.seed,
    };
    let mut net = match &cfg.resume {
        Some(path) => {
            let net = io::read_model(path)?;
            if net.meta() != &meta {
                return Err(Error::MetadataMismatch(format!(
                    "{} was trained with {:?}, this run asks for {:?}",
                    path.display(),
                    net.meta(),
                    meta
                ))
                .into());
            }
            net
        }
        None => NeuralDenoiser::init(meta)?,
    };
    let sigmas = TrainSigmas::new(cfg.train_sigmas)?;
    let mut report = train(&mut net, &data, &sigmas, &cfg.options, held_out.as_ref())?;
    let probe = match &held_out {
        Some(v) => {
            if report.validation.last().map(|p| p.step) != Some(net.adam().step) {
                report.validation.push(ValidationPoint {
                    step: net.adam().step,
                    loss: validation_loss(&net, v, &sigmas)?,
                });
            }
            let (model, identity) = mse_at_sigma(&net, v, cfg.probe_sigma, cfg.seed)?;
            Some(ProbeMse {
                sigma: cfg.probe_sigma,
                model,
                identity,
            })
        }
        None => None,
    };
    io::write_model(out.join("model.nndm"), &net)?;
    let smoothed = smooth(&report.loss, cfg.smoothing_window.max(1));
    let mut csv = String::from("step,loss,smoothed_loss\n");
    let first = net.adam().step - report.loss.len() as u64;
    for (i, (l, s)) in report.loss.iter().zip(&smoothed).enumerate() {
        csv.push_str(&format!("{},{l},{s}\n", first + i as u64 + 1));
    }
    write_file(&out.join("train_loss.csv"), csv)?;
    let summary = TrainSummary {
        steps: net.adam().step,
        train_scenes: data.len(),
        validation_scenes: cfg.validation_scenes,
        loss: report.loss,
        smoothed_loss: smoothed,
        validation: report.validation,
        probe,
    };
    write_json(&out.join("train_report.json"), &summary)?;
    println!("trained to step {}; model at {}", summary.steps, out.join("model.nndm").display());
    Ok(())
}

/// Which denoiser supplies the prior score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Neural { model: PathBuf },
    Gaussian { mean: f64, std: f64 },
    Mixture { components: Vec<MixtureComponent> },
    Identity,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        let MixtureLatentPrior { components } = MixtureLatentPrior::symmetric_pair(2.0, 0.5);
        DenoiserSpec::Mixture { components }
    }
}

struct Prepared {
    denoiser: Box<dyn Denoiser>,
    shape: Shape,
    scale: Option<ScaleSpec>,
}

/// Builds the denoiser and reconciles channels and scale with a trained model.
fn prepare(
    spec: &DenoiserSpec,
    dims: Dims,
    channels: Option<&[String]>,
    scale: Option<&ScaleSpec>,
) -> Result<Prepared> {
    let (denoiser, model_meta): (Box<dyn Denoiser>, Option<ModelMeta>) = match spec {
        DenoiserSpec::Neural { model } => {
            let net = io::read_model(model)?;
            let meta = net.meta().clone();
            (Box::new(net), Some(meta))
        }
        DenoiserSpec::Gaussian { mean, std } => (Box::new(GaussianLatentPrior::new(*mean, *std)?), None),
        DenoiserSpec::Mixture { components } => {
            (Box::new(MixtureLatentPrior::new(components.clone())?), None)
        }
        DenoiserSpec::Identity => (Box::new(IdentityDenoiser), None),
    };
    let (channels, scale) = match model_meta {
        Some(meta) => {
            if let Some(c) = channels {
                if c != meta.channels.as_slice() {
                    return Err(Error::MetadataMismatch(format!(
                        "model channels {:?}, requested {c:?}",
                        meta.channels
                    ))
                    .into());
                }
            }
            if let Some(s) = scale {
                if s != &meta.scale {
                    return Err(Error::MetadataMismatch(format!(
                        "model scale {:?}, requested {s:?}",
                        meta.scale
                    ))
                    .into());
                }
            }
            (meta.channels, Some(meta.scale))
        }
        None => (
            channels.map(<[String]>::to_vec).unwrap_or_else(|| vec!["v".to_string()]),
            scale.cloned(),
        ),
    };
    Ok(Prepared {
        denoiser,
        shape: Shape::new(dims, channels)?,
        scale,
    })
}

/// Runs `count` independent chains; chain `i` uses run index `base + i`.
fn fan_out(
    run: &RunConfig,
    count: usize,
    body: impl Fn(&RunConfig) -> nnd_core::Result<Sample> + Sync,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let runs: Vec<RunConfig> = (0..count)
        .map(|i| {
            let idx = u32::try_from(i)
                .ok()
                .and_then(|i| run.run_index.checked_add(i))
                .ok_or_else(|| CliError::Config("run index overflows u32".into()))?;
            Ok(RunConfig {
                run_index: idx,
                ..run.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(runs.par_iter().map(&body).collect::<nnd_core::Result<Vec<_>>>()?)
}

fn write_samples(
    samples: &[Sample],
    stem: &str,
    run: &RunConfig,
    scale: Option<&ScaleSpec>,
    write_latent: bool,
    out: &Path,
) -> Result<()> {
    for s in samples {
        let idx = s.trace.run_index;
        let channels = &s.field.shape().channels;
        let scale = scale.cloned().unwrap_or_else(|| ScaleSpec::identity(channels));
        let field_meta = NndfMeta {
            scale: scale.clone(),
            eps: run.eps,
            domain: Domain::Field,
        };
        let latent_meta = NndfMeta {
            domain: Domain::Latent,
            ..field_meta.clone()
        };
        io::write_nndf(out.join(format!("{stem}_{idx:04}.nndf")), s.field.as_grid(), &field_meta)?;
        if write_latent {
            io::write_nndf(out.join(format!("latent_{idx:04}.nndf")), &s.latent, &latent_meta)?;
        }
        if run.trace {
            write_json(&out.join(format!("trace_{idx:04}.json")), &s.trace)?;
            write_file(&out.join(format!("trace_{idx:04}.csv")), s.trace.to_csv())?;
        }
        for (t, grid) in &s.trace.snapshots {
            io::write_nndf(out.join(format!("snapshot_{idx:04}_t{t:04}.nndf")), grid, &latent_meta)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub denoiser: DenoiserSpec,
    pub dims: [usize; 3],
    /// Defaults to the model's channels, or a single `v` for analytic priors.
    pub channels: Option<Vec<String>>,
    /// Defaults to the model's scale, or no scaling for analytic priors.
    pub scale: Option<ScaleSpec>,
    pub run: RunConfig,
    pub count: usize,
    pub write_latent: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserSpec::default(),
            dims: [16, 16, 16],
            channels: None,
            scale: None,
            run: RunConfig::default(),
            count: 1,
            write_latent: false,
        }
    }
}

pub fn generate(cfg: &GenerateConfig, out: &Path) -> Result<()> {
    let p = prepare(&cfg.denoiser, dims(cfg.dims), cfg.channels.as_deref(), cfg.scale.as_ref())?;
    let samples = fan_out(&cfg.run, cfg.count, |run| {
        sampler::generate(run, &p.shape, p.denoiser.as_ref(), p.scale.as_ref())
    })?;
    write_samples(&samples, "sample", &cfg.run, p.scale.as_ref(), cfg.write_latent, out)?;
    println!("generated {} sample(s) in {}", samples.len(), out.display());
    Ok(())
}

/// Simulated data from a stored ground-truth field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub truth: PathBuf,
    pub forward_model: ForwardModelSpec,
    #[serde(default)]
    pub noise: NoiseOptions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    pub denoiser: DenoiserSpec,
    /// A measurement file; exclusive with `simulate`.
    pub measurement: Option<PathBuf>,
    pub simulate: Option<SimulateConfig>,
    pub scale: Option<ScaleSpec>,
    pub run: RunConfig,
    pub count: usize,
    pub write_latent: bool,
}

impl Default for InvertConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserSpec::default(),
            measurement: None,
            simulate: None,
            scale: None,
            run: RunConfig::default(),
            count: 1,
            write_latent: false,
        }
    }
}

pub fn invert(cfg: &InvertConfig, out: &Path) -> Result<()> {
    let (shape, m) = match (&cfg.measurement, &cfg.simulate) {
        (Some(path), None) => io::read_measurement(path)?,
        (None, Some(sim)) => {
            let (truth, meta) = io::read_nndf(&sim.truth)?;
            if meta.domain != Domain::Field {
                return Err(Error::Format("ground truth must be a field, not latents".into()).into());
            }
            let fm = sim.forward_model.build()?;
            let m = measure(&truth, fm.as_ref(), sim.seed, &sim.noise)?;
            io::write_measurement(out.join("measurement.nndy"), truth.shape(), &m)?;
            write_file(&out.join("measurement.csv"), io::measurement_csv(&m))?;
            (truth.shape().clone(), m)
        }
        _ => {
            return Err(CliError::Config(
                "set exactly one of `measurement` and `simulate`".into(),
            ))
        }
    };
    let p = prepare(&cfg.denoiser, shape.dims, Some(&shape.channels), cfg.scale.as_ref())?;
    let fm: Box<dyn ForwardModel> = m.meta.forward_model.build()?;
    let samples = fan_out(&cfg.run, cfg.count, |run| {
        sampler::invert(run, &p.shape, p.denoiser.as_ref(), fm.as_ref(), &m.values, p.scale.as_ref())
    })?;
    write_samples(&samples, "posterior", &cfg.run, p.scale.as_ref(), cfg.write_latent, out)?;
    println!("drew {} posterior sample(s) in {}", samples.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {}

/// Prints the table and writes it as JSON; any failing row is an error.
pub fn oracle_check(_cfg: &OracleConfig, out: &Path) -> Result<Vec<CheckRow>> {
    let rows = run_checks()?;
    print!("{}", format_table(&rows));
    write_json(&out.join("oracle_check.json"), &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MipConfig {
    pub input: PathBuf,
    pub axis: Axis,
    pub gamma: f64,
    /// Defaults to every channel of the input.
    pub channels: Option<Vec<String>>,
}

impl Default for MipConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("sample_0000.nndf"),
            axis: Axis::Z,
            gamma: 1.0,
            channels: None,
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

pub fn render_mip(cfg: &MipConfig, out: &Path) -> Result<()> {
    let (grid, meta): (Grid, NndfMeta) = io::read_nndf(&cfg.input)?;
    if meta.domain != Domain::Field {
        return Err(Error::Format("render-mip needs a field, not latents".into()).into());
    }
    let channels = cfg.channels.clone().unwrap_or_else(|| grid.shape().channels.clone());
    let stem = file_stem(&cfg.input);
    for c in &channels {
        let (pgm, sidecar) = mip::render(&grid, c, cfg.axis, cfg.gamma)?;
        let base = format!("{stem}_{c}_{}", axis_name(cfg.axis));
        write_file(&out.join(format!("{base}.pgm")), pgm)?;
        write_json(&out.join(format!("{base}.json")), &sidecar)?;
    }
    println!("rendered {} channel(s) of {}", channels.len(), cfg.input.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracePlotConfig {
    pub input: PathBuf,
}

impl Default for TracePlotConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("trace_0000.json"),
        }
    }
}

pub fn trace_plot(cfg: &TracePlotConfig, out: &Path) -> Result<()> {
    let trace: sampler::Trace = serde_json::from_str(&read_text(&cfg.input)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.input.display())))?;
    let path = out.join(format!("{}.csv", file_stem(&cfg.input)));
    write_file(&path, trace.to_csv())?;
    println!("wrote {} rows to {}", trace.len(), path.display());
    Ok(())
}
