//! Counter-based randomness.
//!
//! Every random draw is a pure function of `(seed, stream, counter)`, so
//! work can be split across threads or reordered without changing results.
//! Longer sequences use ChaCha8, which is itself counter-based, seeded from
//! a hashed key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed with two counters into 64 uniformly mixed bits.
#[inline]
pub fn hash3(seed: u64, a: u64, b: u64) -> u64 {
    let h = mix64(seed.wrapping_add(GOLDEN));
    let h = mix64(h ^ a.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
    mix64(h ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(GOLDEN))
}

/// Uniform double in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in `[0, 1)` keyed by `(seed, a, b)`.
#[inline]
pub fn uniform3(seed: u64, a: u64, b: u64) -> f64 {
    unit_f64(hash3(seed, a, b))
}

/// An independent ChaCha8 stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ GOLDEN));
    rng.set_stream(stream);
    rng
}
