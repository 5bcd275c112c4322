//! Seed derivation and the crate-wide pseudo-random generator.
//!
//! Every stochastic step draws from a `ChaCha8Rng` seeded by mixing an
//! experiment seed with the identifiers of the draw (sample id, view index,
//! epoch, ...) through SplitMix64. ChaCha output is specified bit-for-bit, so
//! runs reproduce across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags keep independent uses of the same base seed apart.
pub mod stream {
    pub const DATASET: u64 = 0x5D47_A5E7;
    pub const AUG_MEASURE: u64 = 0xA116_0001;
    pub const AUG_TRAIN: u64 = 0xA116_0002;
    pub const INIT: u64 = 0x1A17_0003;
    pub const SHUFFLE: u64 = 0x5AFF_0004;
    pub const REMOVAL: u64 = 0x4E30_0005;
    pub const PROBE: u64 = 0x970B_0006;
    pub const LIPSCHITZ: u64 = 0x11B5_0007;
    pub const SPLIT: u64 = 0x5B11_0008;
}
