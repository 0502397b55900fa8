//! Seeded randomness with a fixed, documented algorithm.
//!
//! Everything random in this crate draws from a ChaCha8 stream seeded with a
//! 64-bit value, and Gaussian samples use the Box-Muller transform on 53-bit
//! uniforms. Both are fully specified, so identical seeds give bit-identical
//! results on every platform and at every thread count. Independent substreams
//! (one per scene, per image, ...) are derived by seeding fresh generators
//! with `seed + index`; adjacent seeds of a cipher-based stream are unrelated.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [0, 1) with 53 random bits, the full precision of an f64.
pub fn uniform(rng: &mut SeededRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [lo, hi). Degenerate ranges (lo == hi) return lo.
pub fn uniform_in(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Uniform integer in [lo, hi] inclusive, by rejection-free scaling.
pub fn uniform_usize(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    debug_assert!(lo <= hi);
    let span = (hi - lo + 1) as f64;
    let idx = (uniform(rng) * span) as usize;
    lo + idx.min(hi - lo)
}

/// Gaussian sampler with the spare-value caching of Box-Muller.
#[derive(Debug, Default)]
pub struct Normal {
    spare: Option<f64>,
}

impl Normal {
    pub fn new() -> Self {
        Self::default()
    }

    /// One standard-normal sample. Consumes two uniforms on every other call.
    pub fn sample(&mut self, rng: &mut SeededRng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let r = (-2.0 * (1.0 - uniform(rng)).ln()).sqrt();
        let theta = std::f64::consts::TAU * uniform(rng);
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
