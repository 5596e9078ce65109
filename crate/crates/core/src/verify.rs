//! Oracle cross-checks of the analytic components, as a table of rows.

use rand::Rng;
use serde::Serialize;

use crate::denoise::{
    Denoiser, GaussianLatentPrior, IdentityDenoiser, MixtureComponent, MixtureLatentPrior,
};
use crate::error::Result;
use crate::forward::{log_likelihood, BeerLambert, ForwardModel, IdentityModel, LinearProjection};
use crate::grid::{Axis, Dims, Field, Grid, Shape};
use crate::oracle::{
    finite_diff_grad, ks_distance_cdf, normal_cdf, normal_pdf, oracle_posterior_mean,
    wasserstein1, Grid1D, ORACLE_HALF_WIDTH, ORACLE_POINTS,
};
use crate::rng::{normals, Purpose, Streams};
use crate::schedule::{AnnealConfig, AnnealSchedule, TrainSigmaConfig, TrainSigmas};
use crate::score::{likelihood_grad, prior_score};

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

/// `rho_noisy` values of the denoiser sweep: 121 points on `[-6, 6]`.
pub fn sweep_points() -> Vec<f64> {
    (0..121).map(|i| -6.0 + 0.1 * i as f64).collect()
}

pub const SWEEP_SIGMAS: [f64; 3] = [0.1, 1.0, 3.0];

fn scalar(v: f64) -> Grid {
    Grid::new(Shape::scalar_channel(Dims::new(1, 1, 1)), vec![v]).expect("one value")
}

/// Largest `|D(r, sigma) - quadrature|` over the sweep.
pub fn denoiser_oracle_error(
    den: &dyn Denoiser,
    prior: &dyn Fn(f64) -> f64,
    support: Grid1D,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &sigma in &SWEEP_SIGMAS {
        for r in sweep_points() {
            let d = den.denoise(&scalar(r), sigma)?.values()[0];
            let q = oracle_posterior_mean(prior, support, r, sigma)?;
            worst = worst.max((d - q).abs());
        }
    }
    Ok(worst)
}

/// Relative error of `likelihood_grad` against central differences of the
/// log-likelihood composed with `exp`, identity denoiser.
pub fn likelihood_fd_error(fm: &dyn ForwardModel, rho: &Grid, y: &[f64], step: f64) -> Result<f64> {
    let analytic = likelihood_grad(&IdentityDenoiser, fm, y, rho, 1.0)?;
    let f = |p: &[f64]| {
        let x = Field::new(rho.shape().clone(), p.iter().map(|v| v.exp()).collect())
            .expect("exp is positive");
        log_likelihood(y, x.as_grid(), fm).expect("valid measurement")
    };
    let numeric = finite_diff_grad(&f, rho.values(), step);
    Ok(rel_err(analytic.values(), &numeric))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// One case of [`likelihood_grad_sweep`].
#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub model: &'static str,
    pub denoiser: &'static str,
    pub dims: Dims,
    pub case: u64,
    pub sigma: f64,
    pub rel_err: f64,
}

/// `likelihood_grad` against central differences (step `1e-6`) of
/// `rho -> log p(y | exp(D(rho, sigma)))`.
///
/// Covers identity, projection and Beer-Lambert models, a Gaussian and a
/// two-component mixture denoiser, on a single voxel and on `4^3`, with
/// `cases` random draws of `rho`, `sigma` and `y` per combination.
pub fn likelihood_grad_sweep(seed: u64, cases: u64) -> Result<Vec<GradCase>> {
    let models: Vec<(&'static str, Box<dyn ForwardModel>)> = vec![
        ("identity", Box::new(IdentityModel)),
        ("projection", Box::new(LinearProjection { axis: Axis::Z, weights: None })),
        ("beer_lambert", Box::new(BeerLambert::new(Axis::Y, 100.0)?)),
    ];
    let mix = MixtureLatentPrior::new(vec![
        MixtureComponent { weight: 0.3, mean: -1.5, std: 0.4 },
        MixtureComponent { weight: 0.7, mean: 0.5, std: 0.6 },
    ])?;
    let denoisers: Vec<(&'static str, Box<dyn Denoiser>)> = vec![
        ("gaussian", Box::new(GaussianLatentPrior::new(-0.5, 0.8)?)),
        ("mixture", Box::new(mix)),
    ];
    let streams = Streams::new(seed);
    let mut out = Vec::new();
    for dims in [Dims::new(1, 1, 1), Dims::cube(4)] {
        let shape = Shape::scalar_channel(dims);
        let n = shape.len();
        for (model, fm) in &models {
            for (denoiser, den) in &denoisers {
                for case in 0..cases {
                    let mut rng = streams.stream(Purpose::Test, case);
                    let sigma = rng.random_range(0.1..2.0);
                    let rho: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
                    // Data from a different field so the residual is not zero.
                    let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..1.0).exp()).collect();
                    let truth = Field::new(shape.clone(), truth)?;
                    let y: Vec<f64> = fm
                        .apply(truth.as_grid())?
                        .iter()
                        .map(|c| c * rng.random_range(0.8..1.2) + 0.05)
                        .collect();
                    let grid = Grid::new(shape.clone(), rho.clone())?;
                    let analytic = likelihood_grad(den.as_ref(), fm.as_ref(), &y, &grid, sigma)?;
                    let f = |p: &[f64]| {
                        let g = Grid::new(shape.clone(), p.to_vec()).expect("length matches");
                        let d = den.denoise(&g, sigma).expect("valid sigma");
                        let x = Field::new(shape.clone(), d.values().iter().map(|v| v.exp()).collect())
                            .expect("exp is positive");
                        log_likelihood(&y, x.as_grid(), fm.as_ref()).expect("valid measurement")
                    };
                    let numeric = finite_diff_grad(&f, &rho, 1e-6);
                    out.push(GradCase {
                        model,
                        denoiser,
                        dims,
                        case,
                        sigma,
                        rel_err: rel_err(analytic.values(), &numeric),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn default_mixture() -> MixtureLatentPrior {
    MixtureLatentPrior::symmetric_pair(2.0, 0.5)
}

/// The default oracle suite.
pub fn run_checks() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();

    let train = TrainSigmas::new(TrainSigmaConfig::default())?;
    let anneal = AnnealSchedule::new(AnnealConfig::default())?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let endpoint = rel(train.sigma(1), 1e-2)
        .max(rel(train.sigma(train.len()), 1e2))
        .max(rel(anneal.sigma(1), 1e-2))
        .max(rel(anneal.sigma(anneal.steps()), 1e2));
    rows.push(CheckRow::at_most("schedule_endpoints_rel", endpoint, 1e-12));

    let g = GaussianLatentPrior::new(0.5, 1.3)?;
    let support = Grid1D::around(g.mean, g.std)?;
    let err = denoiser_oracle_error(&g, &|r| normal_pdf(r, g.mean, g.std), support)?;
    rows.push(CheckRow::at_most("gaussian_denoiser_vs_quadrature", err, 1e-6));

    let mix = default_mixture();
    let lo = mix.components.iter().map(|c| c.mean - ORACLE_HALF_WIDTH * c.std).fold(f64::INFINITY, f64::min);
    let hi = mix.components.iter().map(|c| c.mean + ORACLE_HALF_WIDTH * c.std).fold(f64::NEG_INFINITY, f64::max);
    let support = Grid1D::new(lo, hi, ORACLE_POINTS)?;
    let density = |r: f64| {
        mix.components
            .iter()
            .map(|c| c.weight * normal_pdf(r, c.mean, c.std))
            .sum::<f64>()
    };
    let err = denoiser_oracle_error(&mix, &density, support)?;
    rows.push(CheckRow::at_most("mixture_denoiser_vs_quadrature", err, 1e-6));

    // Score of N(mu, s^2 + sigma^2) in closed form.
    let mut worst = 0.0f64;
    for &sigma in &SWEEP_SIGMAS {
        for r in sweep_points() {
            let s = prior_score(&g, &scalar(r), sigma)?.values()[0];
            let exact = -(r - g.mean) / (g.std * g.std + sigma * sigma);
            worst = worst.max((s - exact).abs());
        }
    }
    rows.push(CheckRow::at_most("gaussian_score_vs_marginal", worst, 1e-10));

    let shape = Shape::scalar_channel(Dims::cube(2));
    let rho = Grid::new(shape.clone(), vec![0.3, -0.2, 1.1, 0.0, 0.7, -1.0, 0.4, 0.9])?;
    let y: Vec<f64> = rho.values().iter().map(|v| v.exp() * 1.1 + 0.05).collect();
    let err = likelihood_fd_error(&IdentityModel, &rho, &y, 1e-6)?;
    rows.push(CheckRow::at_most("likelihood_grad_identity_fd_rel", err, 1e-6));

    let bl = BeerLambert::new(Axis::Z, 50.0)?;
    let y = vec![30.0, 10.0, 25.0, 40.0];
    let err = likelihood_fd_error(&bl, &rho, &y, 1e-6)?;
    rows.push(CheckRow::at_most("likelihood_grad_beer_lambert_fd_rel", err, 1e-6));

    let fd = finite_diff_grad(&|x| x[0] * x[0], &[3.0], 1e-5)[0];
    rows.push(CheckRow::at_most("finite_diff_square", (fd - 6.0).abs(), 1e-8));

    let streams = Streams::new(0);
    let a = normals(&mut streams.stream(Purpose::Test, 0), 5000);
    let ks = ks_distance_cdf(&a, &|x| normal_cdf(x, 0.0, 1.0))?;
    rows.push(CheckRow::at_most("ks_normal_n5000", ks, 0.04));

    let b: Vec<f64> = normals(&mut streams.stream(Purpose::Test, 1), 5000)
        .into_iter()
        .map(|v| v + 1.0)
        .collect();
    let w = wasserstein1(&a, &b)?;
    rows.push(CheckRow::at_most("w1_unit_shift_error", (w - 1.0).abs(), 0.05));

    Ok(rows)
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:>12}  {:>9}  result\n", "check", "value", "tolerance");
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>12.3e}  {:>9.1e}  {}\n",
            r.name,
            r.value,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    s
}
