use nnd_core::denoise::{Denoiser, GaussianLatentPrior, MixtureLatentPrior};
use nnd_core::forward::{ForwardModel, IdentityModel, LinearProjection};
use nnd_core::latent::{apply_scale, from_latent, to_latent, ScaleDirection, ScaleSpec, DEFAULT_EPS};
use nnd_core::rng::{Purpose, Streams};
use nnd_core::schedule::{AnnealConfig, AnnealSchedule};
use nnd_core::score::prior_score;
use nnd_core::{Axis, Dims, Field, Grid, Shape};
use proptest::prelude::*;
use rand::Rng;

fn scalar_shape(n: usize) -> Shape {
    Shape::scalar_channel(Dims::new(1, 1, n))
}

#[test]
fn thousand_latents_in_wide_range_map_to_positive_fields() {
    let mut rng = Streams::new(1).stream(Purpose::Test, 0);
    let rho: Vec<f64> = (0..1000).map(|_| rng.random_range(-50.0..5.0)).collect();
    let x = from_latent(&Grid::new(scalar_shape(1000), rho).unwrap()).unwrap();
    assert_eq!(x.values().iter().filter(|v| **v <= 0.0).count(), 0);
}

#[test]
fn round_trip_within_eight_ulp() {
    for x in [0.0, 1e-3, 1.0, 1e3] {
        let f = Field::new(scalar_shape(1), vec![x]).unwrap();
        let back = from_latent(&to_latent(&f, DEFAULT_EPS).unwrap()).unwrap().values()[0];
        let expect = x + DEFAULT_EPS;
        let ulp = expect.next_up() - expect;
        assert!((back - expect).abs() <= 8.0 * ulp, "x={x}: {back} vs {expect}");
    }
}

proptest! {
    #[test]
    fn from_latent_is_positive(rho in prop::collection::vec(-700.0f64..700.0, 1..64)) {
        let n = rho.len();
        let x = from_latent(&Grid::new(scalar_shape(n), rho).unwrap()).unwrap();
        prop_assert!(x.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn to_latent_is_strictly_increasing(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        prop_assume!(a != b);
        let f = Field::new(scalar_shape(2), vec![a, b]).unwrap();
        let r = to_latent(&f, DEFAULT_EPS).unwrap();
        let r = r.values();
        prop_assert_eq!(a < b, r[0] < r[1]);
    }

    #[test]
    fn scale_forward_inverse(values in prop::collection::vec(0.0f64..1e4, 8), s in 1e-3f64..1e3) {
        let shape = Shape::new(Dims::new(1, 2, 2), vec!["a".into(), "b".into()]).unwrap();
        let spec = ScaleSpec::new([("a".to_string(), s), ("b".to_string(), 1.0 / s)]).unwrap();
        let f = Field::new(shape, values.clone()).unwrap();
        let back = apply_scale(&apply_scale(&f, &spec, ScaleDirection::Forward).unwrap(), &spec, ScaleDirection::Inverse).unwrap();
        for (x, y) in back.values().iter().zip(&values) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn staircase_and_alpha_ratio(steps in 2usize..400, period in 1usize..20) {
        prop_assume!(period < steps && (steps % period == 0 || steps / period >= 2));
        let cfg = AnnealConfig { steps, period, ..AnnealConfig::default() };
        let s = AnnealSchedule::new(cfg).unwrap();
        prop_assert_eq!(s.sigma(1), cfg.sigma_min);
        prop_assert!(((s.sigma(steps) - cfg.sigma_max) / cfg.sigma_max).abs() <= 1e-12);
        let full = steps - steps % period;
        for t in 1..=full {
            let block_start = (t - 1) / period * period + 1;
            prop_assert_eq!(s.sigma(t), s.sigma(block_start));
        }
        for t in [1, steps / 2 + 1, steps] {
            let ratio = s.alpha(t) / s.alpha(1);
            let expect = (s.sigma(t) / s.sigma(1)).powi(2);
            prop_assert!((ratio - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn projection_adjoint(x in prop::collection::vec(0.0f64..10.0, 24), u in prop::collection::vec(-5.0f64..5.0, 12)) {
        let shape = Shape::scalar_channel(Dims::new(2, 3, 4));
        let grid = Grid::new(shape, x).unwrap();
        for (axis, n) in [(Axis::Z, 12), (Axis::Y, 8), (Axis::X, 6)] {
            let fm = LinearProjection { axis, weights: None };
            let u = &u[..n];
            let lhs: f64 = fm.apply(&grid).unwrap().iter().zip(u).map(|(a, b)| a * b).sum();
            let rhs = grid.dot(&fm.vjp(&grid, u).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
        let u24: Vec<f64> = u.iter().chain(u.iter()).copied().collect();
        let lhs: f64 = IdentityModel.apply(&grid).unwrap().iter().zip(&u24).map(|(a, b)| a * b).sum();
        let rhs = grid.dot(&IdentityModel.vjp(&grid, &u24).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn mixture_denoiser_is_monotone_and_bounded(r in -8.0f64..8.0, d in 1e-3f64..2.0, sigma in 0.05f64..5.0) {
        // A posterior mean under a mixture is increasing in the observation
        // and lies within the span of the component means and the observation.
        let mix = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
        let g = |v: f64| mix.denoise(&Grid::new(scalar_shape(1), vec![v]).unwrap(), sigma).unwrap().values()[0];
        prop_assert!(g(r + d) >= g(r));
        let lo = r.min(-2.0 - 12.0 * 0.3);
        let hi = r.max(2.0 + 12.0 * 0.3);
        prop_assert!(g(r) >= lo && g(r) <= hi);
    }

    #[test]
    fn gaussian_score_is_closed_form(r in -6.0f64..6.0, sigma in 0.05f64..5.0) {
        let g = GaussianLatentPrior::new(0.0, 1.0).unwrap();
        let s = prior_score(&g, &Grid::new(scalar_shape(1), vec![r]).unwrap(), sigma).unwrap().values()[0];
        prop_assert!((s + r / (1.0 + sigma * sigma)).abs() <= 1e-10);
    }
}
