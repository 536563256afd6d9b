//! Seeded randomness with a fixed, documented algorithm.
//!
//! Every random draw in the crate goes through [`SeededRng`], a SplitMix64
//! generator (64-bit state, Vigna's reference constants). Derived draws are
//! specified here so that any implementation can reproduce them:
//!
//! * `uniform()` takes the top 53 bits of `next_u64` and scales by 2^-53.
//! * `below(n)` uses rejection sampling on `next_u64`: values at or above
//!   `u64::MAX - (u64::MAX % n)` are discarded, the rest reduced mod `n`.
//! * `shuffle` is the Durstenfeld Fisher-Yates pass from the last index down,
//!   swapping `i` with `below(i + 1)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Independent stream for a named purpose: the seed is mixed with a
    /// stream tag through one SplitMix64 output.
    pub fn stream(seed: u64, tag: u64) -> Self {
        let mut mixer = SplitMix64::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self::new(mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
