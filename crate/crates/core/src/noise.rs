//! Counter-based Gaussian increments.
//!
//! Step `k` of a stream with seed `s` reads four 32-bit words of ChaCha8 keyed by
//! `s` starting at word `4k`, so any step can be regenerated in isolation and a
//! sequential reader produces exactly the same values.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

const WORDS_PER_STEP: u128 = 4;

/// SplitMix64 finalizer; derives independent stream seeds from a master seed.
#[inline]
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps a 64-bit word to `(0, 1]`.
#[inline]
fn open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal pair from two words (Box–Muller).
#[inline]
fn normal_pair(a: u64, b: u64) -> [f64; 2] {
    let r = (-2.0 * open_unit(a).ln()).sqrt();
    let (s, c) = (TAU * open_unit(b)).sin_cos();
    [r * c, r * s]
}

/// Sequential reader of the increments of one stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    scale: f64,
    next_step: u64,
}

impl NoiseStream {
    /// Increments with variance `variance` per component, starting at step `first_step`.
    pub fn new(seed: u64, variance: f64, first_step: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(first_step as u128 * WORDS_PER_STEP);
        Self { rng, scale: variance.sqrt(), next_step: first_step }
    }

    #[inline]
    pub fn next_increment(&mut self) -> [f64; 2] {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        self.next_step += 1;
        let [x, y] = normal_pair(a, b);
        [x * self.scale, y * self.scale]
    }

    pub fn position(&self) -> u64 {
        self.next_step
    }
}

/// Increment `step` of the stream with seed `seed`, by random access.
pub fn increment_at(seed: u64, variance: f64, step: u64) -> [f64; 2] {
    NoiseStream::new(seed, variance, step).next_increment()
}
