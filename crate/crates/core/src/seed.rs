//! Deterministic seed derivation and the scene random stream.
//!
//! Sub-seeds are derived with splitmix64 over `(seed, stage name, image id)`.
//! Random streams are ChaCha8 keyed with the little-endian seed in the first
//! eight key bytes (remaining key bytes, nonce and stream id all zero).
//! Integers in `[0, n)` are drawn as `(u64 * n) >> 64`, reals in `[0, 1)` as
//! `(u64 >> 11) * 2^-53`, so the streams are reproducible from this
//! description alone.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed for one pipeline stage and image.
pub fn derive_seed(seed: u64, stage: &str, image_id: u64) -> u64 {
    let mut h = splitmix64(seed);
    for b in stage.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ image_id)
}

/// Counter-based random stream (ChaCha8) with portable sampling helpers.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self { rng: ChaCha8Rng::from_seed(key) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform real in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Uniform integer in `[lo, hi]`.
    #[inline]
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform real in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}
