//! Seeded RNG construction shared by every sampling routine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type MegaRng = ChaCha8Rng;

/// Every sampler goes through this so equal seeds give equal streams.
pub fn seeded(seed: u64) -> MegaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed for replicate `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
