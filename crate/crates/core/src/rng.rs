//! Seeded random streams.
//!
//! Every stochastic step draws from its own stream, derived from the run seed
//! and a fixed key path (purpose, slab index, ...). Toggling one randomization
//! component therefore never perturbs the draws of another, and per-slab work
//! can be fanned out in any order without changing results.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Stream keys used by the synthetic engine.
pub mod stream {
    pub const POSE: u64 = 1;
    pub const DEFORM: u64 = 2;
    pub const CROP: u64 = 3;
    pub const RENDER: u64 = 4;
    pub const ILLUM: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const SUBSET: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a key path into a child seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `keys` below this generator's seed.
    pub fn child(&self, keys: &[u64]) -> Self {
        Self::new(derive_seed(self.seed, keys))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        Normal::new(mean, std)
            .expect("finite non-negative std")
            .sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n`, returned sorted.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }
}
