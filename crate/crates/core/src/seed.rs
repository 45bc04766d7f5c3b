//! Seed derivation for independent random streams.
//!
//! Every stochastic step derives its own seed from a base seed and a tuple of
//! indices, so serial and parallel schedules draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, order-sensitively.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, kept distinct so that e.g. probe and SGD streams never collide.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const PROBE: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const SGD: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SELECT: u64 = 6;
    pub const DATA: u64 = 7;
}
