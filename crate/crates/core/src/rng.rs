//! Seed plumbing. Every random stream in the crate is a [`ChaCha8Rng`] derived
//! from one master seed, so a run is fully determined by its config seed and
//! independent streams never contend over a shared generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream ids, so call sites don't collide by accident.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const PRETEXT: u64 = 4;
    pub const SCENE: u64 = 5;
    pub const DOMAIN_SHIFT: u64 = 6;
    pub const PROBE: u64 = 7;
}

/// splitmix64 finalizer; decorrelates nearby (seed, stream) pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for a named stream.
pub fn subseed(master: u64, stream: u64) -> u64 {
    mix(master ^ mix(stream))
}

/// RNG for a named stream of a run.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, stream))
}

/// RNG for one item (sample, step, ...) within a named stream.
pub fn item_rng(master: u64, stream: u64, item: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(subseed(master, stream) ^ mix(item.wrapping_add(0x5bd1_e995))))
}
