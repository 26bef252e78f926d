//! Seedable random streams with a fixed algorithm.
//!
//! Every random draw in the crate goes through [`StableRng`], a
//! xoshiro256++ generator seeded through SplitMix64. Floats and bounded
//! integers are derived from raw 64-bit outputs here rather than through
//! `rand` distributions, so results do not move when dependency versions do.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for pipeline iteration `iteration` (1-based) under a base seed.
///
/// `mix64(seed + iteration * GOLDEN_GAMMA)`: the gamma is odd, so distinct
/// iterations map to distinct pre-images, and `mix64` is a bijection. Earlier
/// iterations do not depend on the total iteration count.
pub fn iteration_seed(seed: u64, iteration: u64) -> u64 {
    mix64(seed.wrapping_add(iteration.wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct StableRng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl StableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn substream(seed: u64, stream: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`. Lemire's widening multiply with
    /// rejection, so the result is unbiased.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal draw (Box-Muller, polar-free form).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}
