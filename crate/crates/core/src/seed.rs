//! Seed derivation.
//!
//! All randomness flows from explicit `u64` seeds through ChaCha8 streams,
//! so results are identical across platforms and thread schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (cell, repetition) job: `base ^ hash(cell, rep)`.
pub fn job_seed(base: u64, cell: usize, rep: usize) -> u64 {
    base ^ mix64(((cell as u64) << 32) ^ rep as u64)
}

/// Independent sub-stream of `seed`, identified by a fixed tag.
pub fn substream(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
