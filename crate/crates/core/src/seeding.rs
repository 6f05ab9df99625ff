//! Deterministic RNG streams derived from a single user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of indices (epoch, batch, chain, ...).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// RNG for the stream identified by `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
