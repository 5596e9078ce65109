use nnd_core::denoise::{GaussianLatentPrior, IdentityDenoiser, MixtureLatentPrior};
use nnd_core::forward::{add_photon_noise, IdentityModel, NoiseOptions};
use nnd_core::sampler::{generate, generate_direct_baseline, invert, RunConfig};
use nnd_core::schedule::AnnealConfig;
use nnd_core::{Dims, Error, Shape};

fn run(seed: u64, run_index: u32, schedule: AnnealConfig) -> RunConfig {
    RunConfig {
        schedule,
        seed,
        run_index,
        ..RunConfig::default()
    }
}

fn short() -> AnnealConfig {
    AnnealConfig {
        steps: 60,
        ..AnnealConfig::default()
    }
}

#[test]
fn outputs_are_strictly_positive_for_every_denoiser() {
    let shape = Shape::scalar_channel(Dims::cube(4));
    let mixture = MixtureLatentPrior::symmetric_pair(2.0, 0.3);
    let gaussian = GaussianLatentPrior::new(-3.0, 2.0).unwrap();
    let y = vec![0.5; shape.len()];
    for seed in 0..20 {
        let cfg = run(seed, 0, AnnealConfig::default());
        for s in [
            generate(&cfg, &shape, &mixture, None).unwrap(),
            generate(&cfg, &shape, &gaussian, None).unwrap(),
            invert(&cfg, &shape, &gaussian, &IdentityModel, &y, None).unwrap(),
        ] {
            assert!(s.field.min() > 0.0);
        }
    }
}

#[test]
fn run_indices_give_independent_chains() {
    let shape = Shape::scalar_channel(Dims::cube(3));
    let prior = GaussianLatentPrior::new(0.0, 1.0).unwrap();
    let a = generate(&run(1, 0, short()), &shape, &prior, None).unwrap();
    let b = generate(&run(1, 1, short()), &shape, &prior, None).unwrap();
    let a2 = generate(&run(1, 0, short()), &shape, &prior, None).unwrap();
    assert_ne!(a.latent, b.latent);
    assert_eq!(a.latent, a2.latent);
    assert_eq!(a.trace, a2.trace);
    let bad = run(1, nnd_core::rng::MAX_RUNS, short());
    assert!(matches!(generate(&bad, &shape, &prior, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn injected_noise_has_the_scheduled_std() {
    let shape = Shape::scalar_channel(Dims::new(1, 100, 100));
    let prior = GaussianLatentPrior::new(0.0, 1.0).unwrap();
    let s = generate(&run(2, 0, short()), &shape, &prior, None).unwrap();
    assert_eq!(s.trace.len(), 60);
    for r in &s.trace.records {
        let expect = (2.0 * r.alpha).sqrt();
        assert!(
            (r.noise_std - expect).abs() <= 0.03 * expect,
            "t={}: {} vs {expect}",
            r.t,
            r.noise_std
        );
    }
}

#[test]
fn identity_denoiser_baseline_goes_negative() {
    // Pure noise walk in object space: nothing keeps the iterate positive.
    let shape = Shape::scalar_channel(Dims::cube(4));
    let with_negative = (0..100)
        .filter(|&seed| {
            let (x, _) = generate_direct_baseline(&run(seed, 0, short()), &shape, &IdentityDenoiser).unwrap();
            x.min() < 0.0
        })
        .count();
    assert!(with_negative >= 99, "{with_negative} of 100 runs had a negative element");
}

#[test]
fn baseline_trace_records_negative_fraction() {
    let shape = Shape::scalar_channel(Dims::cube(8));
    let (_, trace) = generate_direct_baseline(&run(0, 0, short()), &shape, &IdentityDenoiser).unwrap();
    assert_eq!(trace.len(), 60);
    let first = trace.records[0].negative_fraction.unwrap();
    assert!((0.4..=0.6).contains(&first), "{first}");
}

#[test]
fn high_photon_count_posterior_concentrates() {
    // Scalar object x* = 1e4 seen through the identity with photon noise.
    // The default step scale is unstable at this curvature, so zeta and
    // sigma_T are reduced; see the crate README.
    let shape = Shape::scalar_channel(Dims::new(1, 1, 1));
    let x_star = 1e4;
    let y = add_photon_noise(&[x_star], 17, &NoiseOptions::default()).unwrap();
    let prior = GaussianLatentPrior::new(9.0, 1.0).unwrap();
    let schedule = AnnealConfig {
        sigma_max: 10.0,
        zeta: 1e-7,
        ..AnnealConfig::default()
    };
    let close = (0..100)
        .filter(|&i| {
            let cfg = RunConfig {
                trace: false,
                ..run(23, i, schedule)
            };
            let s = invert(&cfg, &shape, &prior, &IdentityModel, &y, None).unwrap();
            ((s.field.values()[0] - x_star) / x_star).abs() <= 0.05
        })
        .count();
    assert!(close >= 90, "{close} of 100 runs within 5%");
}
