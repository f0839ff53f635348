//! Seeded random streams.
//!
//! Every generator in this crate draws from SplitMix64 (64-bit state). A
//! master seed can be split into independent per-item substreams, so a scene
//! or record produces the same values whether it is generated serially or on
//! a worker thread.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Independent stream number `index` derived from `seed`.
pub fn substream(seed: u64, index: u64) -> SplitMix64 {
    let key = mix64(seed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
    SplitMix64::seed_from_u64(key)
}
