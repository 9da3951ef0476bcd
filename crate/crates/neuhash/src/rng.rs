//! Seeded RNG streams.
//!
//! Every randomized stage derives its own ChaCha stream from the run seed and
//! a fixed tag, so stages stay reproducible independently of each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags. Values are part of the on-disk reproducibility contract:
/// changing one changes every artifact produced under that stage.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const BENCH: u64 = 6;
}

/// splitmix64 finalizer; decorrelates seed/tag pairs.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

pub fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag)))
}
