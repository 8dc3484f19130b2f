//! Seed derivation for independent, schedule-free random streams.
//!
//! Every parallel unit of work (a training item, a generated sample, a
//! candidate evaluation) gets its own stream keyed by `(master seed, index)`,
//! so results never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable stream cipher RNG used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a stream index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master.wrapping_add(GOLDEN)) ^ index.wrapping_mul(GOLDEN).wrapping_add(1))
}

/// Derives a seed from a master seed and a tagged domain, so that e.g. the
/// holdout split and the training shuffle never share a stream.
pub fn derive_tagged(master: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(mix64(master ^ 0x5851_f42d_4c95_7f2d), |acc, b| mix64(acc ^ u64::from(b)))
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn stream_for(master: u64, index: u64) -> StreamRng {
    stream(derive_seed(master, index))
}
