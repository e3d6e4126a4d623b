//! Seeded random source.
//!
//! Every stochastic step in the crate draws from a [`SeededRng`], a ChaCha8
//! stream keyed by a `u64` seed. The sampling helpers below consume a fixed
//! number of 64-bit words per call (documented on each method), so a log
//! produced on one platform is reproduced bit-for-bit on any other.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream; consumes one word.
    pub fn fork(&mut self) -> Self {
        Self::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits; one word.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; one word.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` by Lemire's multiply-shift; one word
    /// (bias below 2^-32 for the sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One word.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal by Box-Muller, using only the cosine branch; two words.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Geometric on `{1, ..., max}` with success probability `rho`,
    /// conditioned on not exceeding `max`; inverse CDF, one word.
    pub fn truncated_geometric(&mut self, rho: f64, max: u32) -> u32 {
        let tail = libm::pow(1.0 - rho, f64::from(max));
        let u = self.uniform();
        let x = libm::log(1.0 - u * (1.0 - tail)) / libm::log(1.0 - rho);
        // x lies in [0, max); clamp guards the rounding at the top end
        (libm::floor(x) as u32 + 1).min(max)
    }

    /// Fisher-Yates; `len - 1` words.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, len: usize, mean: f64, sd: f64) -> Vec<f64> {
        (0..len).map(|_| mean + sd * self.normal()).collect()
    }
}
