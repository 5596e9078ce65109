//! Brute-force reference computations.
//!
//! Nothing here calls into the denoisers, score terms or samplers; these
//! routines exist to check them.

use libm::erfc;

use crate::error::{Error, Result};

/// Uniform 1D grid of `n` points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Points used by default oracle quadrature.
pub const ORACLE_POINTS: usize = 10_000;
/// Fewest grid points the posterior oracles accept.
pub const MIN_ORACLE_POINTS: usize = 1000;
/// Half-width, in standard deviations, of default oracle ranges.
pub const ORACLE_HALF_WIDTH: f64 = 12.0;

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("grid needs at least two points".into()));
        }
        Ok(Self { lo, hi, n })
    }

    /// `mean +- 12 std` with the default resolution.
    pub fn around(mean: f64, std: f64) -> Result<Self> {
        Self::new(
            mean - ORACLE_HALF_WIDTH * std,
            mean + ORACLE_HALF_WIDTH * std,
            ORACLE_POINTS,
        )
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn tabulate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n).map(|i| f(self.point(i))).collect()
    }
}

fn check_resolution(grid: Grid1D) -> Result<()> {
    if grid.n < MIN_ORACLE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "oracle grids need at least {MIN_ORACLE_POINTS} points, got {}",
            grid.n
        )));
    }
    Ok(())
}

pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => step * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

/// `E[rho | rho_noisy]` for `rho ~ prior`, `rho_noisy = rho + N(0, sigma^2)`, by quadrature.
///
/// `support` is where the prior lives; it must integrate to 1 there within
/// 1e-6. The posterior integrals run over `support` intersected with
/// `rho_noisy +- 12 sigma`, discretised with `support.n` points.
pub fn oracle_posterior_mean(
    prior: &dyn Fn(f64) -> f64,
    support: Grid1D,
    rho_noisy: f64,
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    check_resolution(support)?;
    let mass = trapezoid(&support.tabulate(prior), support.step());
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!(
            "prior integrates to {mass} on [{}, {}]",
            support.lo, support.hi
        )));
    }
    let lo = support.lo.max(rho_noisy - ORACLE_HALF_WIDTH * sigma);
    let hi = support.hi.min(rho_noisy + ORACLE_HALF_WIDTH * sigma);
    if !(hi > lo) {
        return Err(Error::Numerical(format!(
            "noisy value {rho_noisy} is outside the prior support"
        )));
    }
    let g = Grid1D::new(lo, hi, support.n)?;
    let weights = g.tabulate(|r| prior(r) * normal_pdf(rho_noisy, r, sigma));
    let den = trapezoid(&weights, g.step());
    if !(den > 1e-300) {
        return Err(Error::Numerical(format!(
            "posterior normaliser underflowed ({den}); widen the grid"
        )));
    }
    let first: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * g.point(i))
        .collect();
    Ok(trapezoid(&first, g.step()) / den)
}

/// Posterior density on `grid` of `rho` given a scalar datum
/// `y ~ N(F(exp(rho)), y_var)`, normalised to integrate to 1.
pub fn oracle_bayes_posterior(
    prior: &dyn Fn(f64) -> f64,
    grid: Grid1D,
    fm: &dyn Fn(f64) -> f64,
    y: f64,
    y_var: f64,
) -> Result<Vec<f64>> {
    if !(y_var > 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {y_var}")));
    }
    check_resolution(grid)?;
    let log_w: Vec<f64> = grid.tabulate(|r| {
        let p = prior(r);
        if p > 0.0 {
            let d = y - fm(r.exp());
            p.ln() - d * d / (2.0 * y_var)
        } else {
            f64::NEG_INFINITY
        }
    });
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Numerical("posterior is zero everywhere on the grid".into()));
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - peak).exp()).collect();
    let z = trapezoid(&w, grid.step());
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Numerical(format!("posterior normaliser is {z}")));
    }
    w.iter_mut().for_each(|v| *v /= z);
    Ok(w)
}

/// Mean and standard deviation of a density tabulated on `grid`.
pub fn density_moments(grid: Grid1D, density: &[f64]) -> (f64, f64) {
    let h = grid.step();
    let m1: Vec<f64> = density.iter().enumerate().map(|(i, p)| p * grid.point(i)).collect();
    let mean = trapezoid(&m1, h);
    let m2: Vec<f64> = density
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = grid.point(i) - mean;
            p * d * d
        })
        .collect();
    (mean, trapezoid(&m2, h).sqrt())
}

/// Central differences, one coordinate at a time.
pub fn finite_diff_grad(f: &dyn Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_distance_cdf(samples: &[f64], cdf: &dyn Fn(f64) -> f64) -> Result<f64> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(((i + 1) as f64 / n - f).max(f - i as f64 / n))
    }))
}

/// Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// Wasserstein-1 distance between samples and a density tabulated on `grid`.
///
/// The reference CDF is the cumulative trapezoid rule, linear between grid
/// points, 0 below the grid and 1 above it; the integral of
/// `|F_emp - F_ref|` is then exact piece by piece.
pub fn wasserstein1_to_density(samples: &[f64], grid: Grid1D, density: &[f64]) -> Result<f64> {
    if density.len() != grid.n {
        return Err(Error::ShapeMismatch(format!(
            "{} density values for {} grid points",
            density.len(),
            grid.n
        )));
    }
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let h = grid.step();
    let mut cdf = Vec::with_capacity(grid.n);
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in density.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        cdf.push(acc);
    }
    let total = acc;
    cdf.iter_mut().for_each(|c| *c /= total);

    // Breakpoints: grid points and samples, merged.
    let pts = grid.points();
    let ref_cdf = |x: f64| -> f64 {
        if x <= grid.lo {
            0.0
        } else if x >= grid.hi {
            1.0
        } else {
            let k = (((x - grid.lo) / h) as usize).min(grid.n - 2);
            let u = (x - pts[k]) / h;
            cdf[k] + u * (cdf[k + 1] - cdf[k])
        }
    };
    let mut breaks: Vec<f64> = pts.iter().copied().chain(s.iter().copied()).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut k = 0usize;
    let mut w1 = 0.0;
    for seg in breaks.windows(2) {
        let (x0, x1) = (seg[0], seg[1]);
        while k < s.len() && s[k] <= x0 {
            k += 1;
        }
        let fe = k as f64 / n;
        let d0 = ref_cdf(x0) - fe;
        let d1 = ref_cdf(x1) - fe;
        let len = x1 - x0;
        w1 += if d0 * d1 >= 0.0 {
            0.5 * len * (d0.abs() + d1.abs())
        } else {
            // Linear difference crosses zero inside the segment.
            0.5 * len * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
        };
    }
    Ok(w1)
}
