//! Counter-based randomness: every draw is a pure function of its key, so
//! results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one well-mixed 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6a09_e667_f3bc_c909, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Uniform draw in `[0, 1)` for the given key.
pub fn uniform(key: u64) -> f64 {
    (splitmix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A stream generator keyed on `keys`.
pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(keys))
}
