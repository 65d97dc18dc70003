//! Seeded, splittable random streams.
//!
//! A [`Prng`] is just a 64-bit seed. Named substreams map onto distinct
//! ChaCha8 stream ids under a key derived from that seed, so draws from one
//! substream never perturb another.

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Prng {
    seed: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, name: &str) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        Stream { rng }
    }

    /// Child generator with an independent seed derived from `name`.
    pub fn derive(&self, name: &str) -> Prng {
        Prng::new(splitmix64(self.seed ^ fnv1a(name.as_bytes())))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One named random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd)
            .expect("standard deviation must be finite and non-negative")
            .sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.rng, n, k).into_vec()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
