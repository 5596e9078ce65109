use nnd_core::denoise::MixtureLatentPrior;
use nnd_core::io::{decode_nndf, encode_nndf, Domain, NndfMeta};
use nnd_core::oracle::ks_distance;
use nnd_core::sampler::{generate, RunConfig};
use nnd_core::synthdata::{default_channels, make_blob_dataset, BlobParams, Dataset};
use nnd_core::{Dims, Shape};

fn corpus(n: usize, seed: u64) -> Dataset {
    make_blob_dataset(n, Dims::cube(16), default_channels(), seed, &BlobParams::default()).unwrap()
}

fn channel(ds: &Dataset, c: usize) -> Vec<f64> {
    ds.scenes
        .iter()
        .flat_map(|s| s.as_grid().channel_values(c).collect::<Vec<_>>())
        .collect()
}

#[test]
fn default_scenes_are_nonnegative_and_sparse() {
    let ds = corpus(100, 0);
    let all: Vec<f64> = ds.scenes.iter().flat_map(|s| s.values().iter().copied()).collect();
    assert!(all.iter().all(|v| *v >= 0.0));
    let zeros = all.iter().filter(|v| **v == 0.0).count() as f64 / all.len() as f64;
    assert!(zeros >= 0.3, "zero fraction {zeros}");
}

#[test]
fn value_distributions_are_stable_across_seeds() {
    let a = corpus(1000, 1);
    let b = corpus(1000, 2);
    for c in 0..a.shape.n_channels() {
        let ks = ks_distance(&channel(&a, c), &channel(&b, c)).unwrap();
        assert!(ks <= 0.05, "channel {c}: KS {ks}");
    }
}

#[test]
fn fixed_seed_gives_identical_files() {
    let bytes = |ds: &Dataset| -> Vec<Vec<u8>> {
        let meta = NndfMeta::field(&ds.shape.channels);
        ds.scenes.iter().map(|s| encode_nndf(s.as_grid(), &meta).unwrap()).collect()
    };
    assert_eq!(bytes(&corpus(10, 4)), bytes(&corpus(10, 4)));
    assert_ne!(bytes(&corpus(10, 4)), bytes(&corpus(10, 5)));
}

#[test]
fn generated_field_survives_the_file_format() {
    let shape = Shape::scalar_channel(Dims::cube(4));
    let cfg = RunConfig {
        seed: 9,
        ..RunConfig::default()
    };
    let s = generate(&cfg, &shape, &MixtureLatentPrior::symmetric_pair(2.0, 0.3), None).unwrap();
    let meta = NndfMeta::field(&shape.channels);
    let (grid, back) = decode_nndf(&encode_nndf(s.field.as_grid(), &meta).unwrap()).unwrap();
    assert_eq!(back, meta);
    for (a, b) in grid.values().iter().zip(s.field.values()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let latent_meta = NndfMeta {
        domain: Domain::Latent,
        ..meta
    };
    let (lat, _) = decode_nndf(&encode_nndf(&s.latent, &latent_meta).unwrap()).unwrap();
    assert_eq!(lat.len(), s.latent.len());
}
