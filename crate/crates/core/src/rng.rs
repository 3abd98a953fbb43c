//! Seeded random stream shared by every sampler.
//!
//! The stream is ChaCha8 seeded through `SeedableRng::seed_from_u64`, which
//! expands the 64-bit seed with PCG32 as documented by `rand_core`. All draws
//! are derived from `next_u64` with the fixed recipes below, so a second
//! implementation following the same recipes reproduces the same graphs.
//!
//! * `unit()`      : `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`
//! * `below(n)`    : `(next_u64 as u128 * n) >> 64`, uniform in `[0, n)`
//! * `bernoulli(p)`: `unit() < p`, exactly one `next_u64` per call

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededStream {
    inner: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Fisher-Yates shuffle, walking `i` from `len - 1` down to 1 and
    /// swapping with `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for random-wiring stage `stage` (0-based) of a network sampled with
/// `seed`: `mix64(seed ^ mix64(stage + 1))`.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    mix64(seed ^ mix64(stage as u64 + 1))
}
