//! Counter-based random streams.
//!
//! Every random draw comes from ChaCha20 keyed by the run's top-level seed.
//! Substreams are selected with the 64-bit ChaCha stream id, laid out as
//!
//! ```text
//! bits 63..56  purpose tag     (see [`Purpose`])
//! bits 55..32  run index       (fan-out of independent runs)
//! bits 31..0   counter         (iteration t, scene index, step, ...)
//! ```
//!
//! so any single draw can be reproduced without replaying earlier ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Run indices occupy 24 bits of the stream id.
pub const MAX_RUNS: u32 = 1 << 24;

pub const ALGORITHM: &str = "chacha20(seed_from_u64); stream = purpose<<56 | run<<32 | index";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Dataset = 1,
    Init = 2,
    Iteration = 3,
    Measurement = 4,
    TrainInit = 5,
    TrainStep = 6,
    Validation = 7,
    Test = 8,
}

/// Factory for named substreams under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
    run: u32,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed, run: 0 }
    }

    /// Streams for the `run`-th of several independent runs sharing a seed.
    pub fn for_run(seed: u64, run: u32) -> Self {
        assert!(run < MAX_RUNS, "run index exceeds 24 bits");
        Self { seed, run }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self, purpose: Purpose, index: u64) -> u64 {
        assert!(index <= u32::MAX as u64, "stream counter exceeds 32 bits");
        ((purpose as u64) << 56) | ((self.run as u64) << 32) | index
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id(purpose, index));
        rng
    }
}

pub fn fill_normal(rng: &mut impl Rng, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_normal(rng, &mut v);
    v
}
