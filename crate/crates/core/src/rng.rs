//! Seed derivation and generator construction.
//!
//! Every random draw in the engine comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Child seeds are derived by hashing the parent seed together
//! with a path of integers (epoch index, step, role, ...), so any sample's
//! randomness depends only on where it sits in the experiment and never on
//! the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash `master` together with `path` into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

/// Generator for a given seed.
pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for a derived child seed.
pub fn child_rng(master: u64, path: &[u64]) -> Rng {
    rng_from(derive_seed(master, path))
}
