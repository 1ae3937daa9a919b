//! Seeded random streams.
//!
//! All randomness in the harness comes from `ChaCha8Rng` (portable, with a
//! fixed output sequence for a given 64-bit seed), with Gaussian draws
//! from `rand_distr::StandardNormal`. Independent streams are
//! keyed by a master seed and a list of integers. The keys are folded with
//! SplitMix64, so any single stream can be reproduced without generating
//! the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the stream identified by `keys` under `master`.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(master), |state, &k| {
        splitmix64(state ^ splitmix64(k))
    })
}

pub fn stream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, keys))
}
